/* C API for the AUFormer library: opaque handles, status codes, and
 * JSON-string results. All strings returned through char** outputs are
 * heap-allocated and must be released with auf_string_free(). */
#ifndef AUFORMER_H
#define AUFORMER_H

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  AUF_OK = 0,
  AUF_ERR_RUNTIME = 1,
  AUF_ERR_CONFIG = 2,
  AUF_ERR_IO = 3,
  AUF_ERR_FORMAT = 4,
  AUF_ERR_SHAPE = 5
} auf_status;

/* Message for the most recent failing call on this thread. */
const char* auf_last_error(void);

typedef struct auf_model auf_model;
typedef struct auf_dataset auf_dataset;

/* Synthetic dataset generation from a spec JSON file; writes sample files
 * plus manifest.jsonl under out_dir and returns the manifest path. */
auf_status auf_generate_dataset(const char* spec_json_path, const char* out_dir,
                                char** manifest_path_out);

auf_status auf_dataset_open(const char* manifest_path, auf_dataset** out);
void auf_dataset_free(auf_dataset* ds);
int auf_dataset_size(const auf_dataset* ds);
int auf_dataset_num_labels(const auf_dataset* ds);

/* run_config_json is the full run configuration document (sections vit,
 * moke, loss, train, data, ablation; all fields defaulted). */
auf_status auf_model_create(const char* run_config_json, auf_model** out);
auf_status auf_model_load(const char* checkpoint_path, auf_model** out);
auf_status auf_model_save(auf_model* m, const char* checkpoint_path);
void auf_model_free(auf_model* m);

/* image is row-major [channels, height, width]; probs/aux_probs receive
 * num_aus values each. */
auf_status auf_model_predict(auf_model* m, const float* image, int channels, int height, int width,
                             float* probs, float* aux_probs);

/* Trains in place per the model's run configuration; metrics JSON includes
 * the config hash, per-AU F1 on the training data, loss history, parameter
 * counts, and FLOP estimates. */
auf_status auf_train(auf_model* m, auf_dataset* ds, char** metrics_json_out);
auf_status auf_evaluate(auf_model* m, auf_dataset* ds, double threshold, char** metrics_json_out);

/* options_json: {"losses": "all"|"mdwa"|"wdi", "points": int, "seed": int,
 * "tolerance": double, "negate_hook": bool, "model": bool,
 * "model_params": int}. The report JSON carries pass/fail and per-point
 * entries {loss, point, analytic, numeric, rel_err}. */
auf_status auf_gradcheck(const char* options_json, char** report_json_out);

/* Learnable/frozen parameter counts and FLOP accounting for the model. */
auf_status auf_param_report(auf_model* m, char** json_out);

/* CSV of loss gradient curves over a monotone probability grid. */
auf_status auf_loss_curves(double margin, int steps, char** csv_out);

void auf_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* AUFORMER_H */
