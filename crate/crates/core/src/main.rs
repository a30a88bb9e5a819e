use std::io::Write;

fn main() {
    if let Some(n) = std::env::var("GEODC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: cannot size the thread pool: {e}");
        }
    }
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = geodc::cli::run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock());
    let _ = std::io::stdout().flush();
    std::process::exit(code);
}
