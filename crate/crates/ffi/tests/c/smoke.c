#include <stdio.h>
#include <string.h>

#include "framekg.h"

int main(int argc, char **argv) {
    if (argc < 2) {
        fprintf(stderr, "usage: smoke <config>\n");
        return 2;
    }
    FkgEngine *e = NULL;
    if (fkg_engine_new(argv[1], &e) != FKG_STATUS_OK) {
        fprintf(stderr, "new: %s\n", fkg_last_error());
        return 1;
    }
    if (fkg_engine_run(e) != FKG_STATUS_OK) {
        fprintf(stderr, "run: %s\n", fkg_last_error());
        return 1;
    }
    char *alerts = NULL;
    if (fkg_alerts_json(e, 0, &alerts) != FKG_STATUS_OK || strstr(alerts, "hit_and_run") == NULL) {
        fprintf(stderr, "alerts: %s\n", alerts ? alerts : fkg_last_error());
        return 1;
    }
    fkg_string_free(alerts);

    char *q = NULL;
    if (fkg_register_query(e, "standing broken: (vehicle", &q) != FKG_STATUS_QUERY || q != NULL) {
        fprintf(stderr, "bad query accepted\n");
        return 1;
    }
    if (strlen(fkg_last_error()) == 0) {
        fprintf(stderr, "no error message\n");
        return 1;
    }
    if (fkg_engine_run(e) != FKG_STATUS_STATE) {
        fprintf(stderr, "second run accepted\n");
        return 1;
    }
    printf("ok %s\n", fkg_version());
    fkg_engine_free(e);
    return 0;
}
