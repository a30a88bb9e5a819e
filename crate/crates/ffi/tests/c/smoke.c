#include <stdio.h>
#include "geodc.h"

int main(void) {
    double prices[2] = {0.1, 0.3};
    double coeffs[2] = {1.0, 1.0};
    double q[2], cost, marginal;
    GeodcStatus st = geodc_allocate(prices, coeffs, 2, 1.0, q, &cost, &marginal);
    if (st != GEODC_STATUS_OK) {
        fprintf(stderr, "allocate failed: %s\n", geodc_last_error());
        return 1;
    }
    printf("%.6f %.6f %.6f %.6f\n", q[0], q[1], cost, marginal);

    GeodcScenario *scn = NULL;
    st = geodc_scenario_load_json("{}", &scn);
    if (st != GEODC_STATUS_CONFIG || scn != NULL) {
        return 2;
    }
    printf("version %s\n", geodc_version());
    return 0;
}
