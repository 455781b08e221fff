#ifndef SEQPL_H
#define SEQPL_H

/* C interface to the sequence pseudo-labeling toolkit. All functions return a
 * status code; on failure the message is available from seqpl_last_error()
 * (thread-local, valid until the next call on the same thread). Strings
 * returned through char** out-params are heap-allocated JSON and must be
 * released with seqpl_string_free. */

#ifdef __cplusplus
extern "C" {
#endif

typedef enum seqpl_status {
  SEQPL_OK = 0,
  SEQPL_ERR_INVALID_ARGUMENT = 1,
  SEQPL_ERR_IO = 2,
  SEQPL_ERR_RUNTIME = 3
} seqpl_status_t;

const char* seqpl_version(void);
const char* seqpl_last_error(void);
void seqpl_string_free(char* s);

/* Command wrappers. config/options JSON may be NULL or "" for defaults;
 * result_json may be NULL when the summary is not wanted. */
seqpl_status_t seqpl_gen_data(const char* config_json, const char* out_dir,
                              char** result_json);
seqpl_status_t seqpl_self_train(const char* config_json, const char* data_dir,
                                const char* run_dir, char** result_json);
seqpl_status_t seqpl_eval(const char* checkpoint_path, const char* dataset_path,
                          const char* options_json, char** result_json);
seqpl_status_t seqpl_rejection(const char* checkpoint_path, const char* dataset_path,
                               const char* options_json, const char* out_dir,
                               char** result_json);
seqpl_status_t seqpl_calibrate(const char* checkpoint_path, const char* dataset_path,
                               const char* options_json, const char* out_dir,
                               char** result_json);

/* Opaque recognizer handle loaded from a checkpoint file. */
typedef struct seqpl_model seqpl_model_t;

seqpl_status_t seqpl_model_load(const char* checkpoint_path, seqpl_model_t** out_model);
void seqpl_model_free(seqpl_model_t* model);

/* {"channels":C,"hidden":D,"vocab":E,"max_len":S,"symbols":[...]} */
seqpl_status_t seqpl_model_info(const seqpl_model_t* model, char** result_json);

/* frames: w x c feature matrix, row-major. Result JSON carries the top label
 * plus the full beam: {"label","log_prob","truncated","hypotheses":[...]}. */
seqpl_status_t seqpl_model_predict(const seqpl_model_t* model, const double* frames,
                                   int w, int c, int beam_width, char** result_json);

#ifdef __cplusplus
}
#endif

#endif /* SEQPL_H */
