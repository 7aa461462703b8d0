#include <math.h>
#include <stdio.h>

#include "hcs_contrast.h"

int main(void) {
    HcsBatch *batch = NULL;
    if (hcs_batch_random_unit(4, 3, 8, 7, &batch) != HCS_STATUS_OK) {
        fprintf(stderr, "batch: %s\n", hcs_last_error());
        return 1;
    }
    HcsLossConfig cfg = hcs_loss_config_default();
    double value = 0.0;
    double err = 1.0;
    if (hcs_loss_evaluate(HCS_LOSS_KIND_IMM, batch, &cfg, &value, NULL, NULL) != HCS_STATUS_OK ||
        hcs_grad_check(HCS_LOSS_KIND_IMM, batch, &cfg, 1e-6, &err) != HCS_STATUS_OK) {
        fprintf(stderr, "loss: %s\n", hcs_last_error());
        return 1;
    }
    hcs_batch_free(batch);

    HcsBatch *single = NULL;
    hcs_batch_random_unit(4, 1, 8, 7, &single);
    HcsStatus status = hcs_loss_evaluate(HCS_LOSS_KIND_IMM, single, &cfg, &value, NULL, NULL);
    hcs_batch_free(single);
    if (status != HCS_STATUS_INVALID_ARGUMENT || hcs_last_error() == NULL) {
        fprintf(stderr, "expected an invalid-argument error\n");
        return 1;
    }
    printf("imm %.6f grad error %.3e\n", value, err);
    return isfinite(value) && err < 1e-4 ? 0 : 1;
}
