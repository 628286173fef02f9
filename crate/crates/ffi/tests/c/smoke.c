#include <stdio.h>

#include "absa.h"

static int check(enum AbsaStatus status) {
    if (status != ABSA_STATUS_OK) {
        const char *msg = absa_last_error_message();
        fprintf(stderr, "absa error %d: %s\n", (int)status, msg ? msg : "(none)");
        return 1;
    }
    return 0;
}

int main(int argc, char **argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: %s CORPUS.xml\n", argv[0]);
        return 2;
    }
    AbsaDataset *ds = NULL;
    AbsaModel *model = NULL;
    size_t sentences = 0, opinions = 0;
    double accuracy = 0.0, macro_f1 = 0.0;
    enum AbsaPolarity polarity;

    if (check(absa_dataset_load(argv[1], "laptop", &ds))) return 1;
    if (check(absa_dataset_counts(ds, &sentences, &opinions))) return 1;
    if (check(absa_model_train(ds, NULL, &model))) return 1;
    if (check(absa_model_evaluate(model, ds, &accuracy, &macro_f1))) return 1;
    if (check(absa_model_predict(model, "the battery life is great", 4, 16, &polarity))) return 1;
    printf("absa %s: %zu sentences, %zu opinions, accuracy %.4f, macro-F1 %.4f, polarity %d\n",
           absa_version(), sentences, opinions, accuracy, macro_f1, (int)polarity);
    absa_model_free(model);
    absa_dataset_free(ds);
    return 0;
}
