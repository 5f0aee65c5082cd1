#include <stdio.h>
#include <string.h>
#include "ldb.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        LdbStatus st_ = (call);                                            \
        if (st_ != LDB_STATUS_OK) {                                        \
            char msg_[256];                                                \
            ldb_last_error_message(msg_, sizeof msg_);                     \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)st_, msg_); \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    LdbTrainConfig cfg;
    CHECK(ldb_config_default(&cfg));
    cfg.epochs = 3;

    LdbDataset *ds = NULL;
    CHECK(ldb_dataset_blobs(300, 3, 6, 0.5, 1, &ds));

    size_t shape[1] = {6};
    LdbNetwork *net = NULL;
    CHECK(ldb_network_from_preset("mlp-8", shape, 1, 3, 16, 1, &net));

    LdbReport *report = NULL;
    CHECK(ldb_train(net, ds, &cfg, &report));
    if (ldb_report_epoch_count(report) != 3) {
        fprintf(stderr, "expected 3 epochs\n");
        return 1;
    }
    LdbEpochSummary e;
    CHECK(ldb_report_epoch(report, 2, &e));

    double acc = 0.0;
    CHECK(ldb_evaluate(net, ds, LDB_SPLIT_VAL, &acc));

    double x[6] = {0};
    double logits[3];
    CHECK(ldb_network_forward(net, x, 1, logits, 3));

    if (ldb_network_forward(net, x, 1, logits, 2) != LDB_STATUS_BUFFER_TOO_SMALL) {
        fprintf(stderr, "short buffer accepted\n");
        return 1;
    }
    char msg[8];
    size_t need = ldb_last_error_message(msg, sizeof msg);
    if (need <= sizeof msg || msg[sizeof msg - 1] != '\0') {
        fprintf(stderr, "truncation not reported\n");
        return 1;
    }

    printf("version %s epochs %zu mode %d acc %.4f\n", ldb_version(), ldb_report_epoch_count(report), (int)e.mode, acc);
    ldb_report_free(report);
    ldb_network_free(net);
    ldb_dataset_free(ds);
    return 0;
}
