#include <stdio.h>
#include <string.h>

#include "oemcoll.h"

int main(int argc, char **argv) {
    if (argc < 2) return 10;
    OemConfig *cfg = NULL;
    if (oem_config_from_file(argv[1], &cfg) != OEM_STATUS_OK) {
        fprintf(stderr, "%s\n", oem_last_error());
        return 1;
    }
    OemData *data = NULL;
    if (oem_data_simulate(cfg, 5, &data) != OEM_STATUS_OK) return 2;
    OemReport *report = NULL;
    if (oem_estimate(cfg, data, &report) != OEM_STATUS_OK) return 3;
    int converged = 0;
    oem_report_converged(report, &converged);
    size_t n = 0;
    oem_report_num_params(report, &n);
    for (size_t i = 0; i < n; i++) {
        char name[32];
        double v, se;
        oem_report_param_name(report, i, name, sizeof name, NULL);
        oem_report_param(report, i, &v, &se);
        printf("%s %.17g %.17g\n", name, v, se);
    }
    OemConfig *bad = NULL;
    OemStatus s = oem_config_from_toml("version = 2", &bad);
    oem_report_free(report);
    oem_data_free(data);
    oem_config_free(cfg);
    if (s != OEM_STATUS_CONFIG || strlen(oem_last_error()) == 0) return 4;
    return converged ? 0 : 5;
}
