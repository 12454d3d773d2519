/* Copyright 2026 The MDF Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to libmdf. All functions return an mdf_status; on failure
 * mdf_last_error() holds a message for the calling thread. Strings returned
 * through char** out-parameters are owned by the caller and must be released
 * with mdf_string_free. Handles are released with their *_free function.
 */
#ifndef MDF_MDF_H_
#define MDF_MDF_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(MDF_BUILDING_LIBRARY)
#define MDF_API __attribute__((visibility("default")))
#else
#define MDF_API
#endif

typedef enum mdf_status {
  MDF_OK = 0,
  MDF_ERR_INVALID_ARGUMENT = 1,
  MDF_ERR_IO = 2,
  MDF_ERR_FORMAT = 3,
  MDF_ERR_SHAPE = 4,
  MDF_ERR_RANGE = 5,
  MDF_ERR_EVALUATOR = 6,
  MDF_ERR_INTERNAL = 7
} mdf_status;

typedef struct mdf_bundle mdf_bundle;
typedef struct mdf_dataset mdf_dataset;
typedef struct mdf_signature mdf_signature;

MDF_API const char* mdf_version(void);
MDF_API const char* mdf_last_error(void);
MDF_API const char* mdf_status_name(mdf_status status);
MDF_API void mdf_string_free(char* s);

/* Bundles */
MDF_API mdf_status mdf_bundle_load(const char* dir, mdf_bundle** out);
MDF_API void mdf_bundle_free(mdf_bundle* bundle);
/* JSON object: model_id, config, parameters, upcast_from_f16. */
MDF_API mdf_status mdf_bundle_info(const mdf_bundle* bundle, char** json_out);
MDF_API mdf_status mdf_bundle_save(const mdf_bundle* bundle, const char* dir, int f16);

MDF_API mdf_status mdf_tokenize(const mdf_bundle* bundle, const char* text, int32_t** ids_out, size_t* n_out);
MDF_API void mdf_ids_free(int32_t* ids);
MDF_API mdf_status mdf_detokenize(const mdf_bundle* bundle, const int32_t* ids, size_t n, char** text_out);

/* Writes the final-position logits (vocab_size floats) into logits_out. */
MDF_API mdf_status mdf_forward_logits(const mdf_bundle* bundle, const int32_t* ids, size_t n, float* logits_out,
                                      size_t logits_len);

/* Intervention for mdf_generate; signature may be NULL (or alpha 0) for none.
 * positions: "all", "last" or "from:<k>". */
typedef struct mdf_intervention {
  const mdf_signature* signature;
  double alpha;
  const size_t* layers; /* NULL = all signature layers */
  size_t n_layers;
  const char* positions; /* NULL = "all" */
  int persist_during_decoding;
} mdf_intervention;

MDF_API mdf_status mdf_generate(const mdf_bundle* bundle, const char* prompt_text, size_t max_new_tokens,
                                double temperature, uint64_t seed, const mdf_intervention* intervention,
                                char** text_out);

/* Datasets (JSONL) */
MDF_API mdf_status mdf_dataset_load(const char* path, mdf_dataset** out);
MDF_API void mdf_dataset_free(mdf_dataset* dataset);
MDF_API size_t mdf_dataset_size(const mdf_dataset* dataset);

/* Signatures. layers/n_layers select layers (NULL = all); max_instances 0 = all. */
MDF_API mdf_status mdf_signature_extract(const mdf_bundle* bundle, const mdf_dataset* dataset, const size_t* layers,
                                         size_t n_layers, size_t max_instances, uint64_t seed, unsigned jobs,
                                         mdf_signature** out);
MDF_API mdf_status mdf_signature_random(const mdf_signature* reference, uint64_t seed, mdf_signature** out);
MDF_API mdf_status mdf_signature_load(const char* path, mdf_signature** out);
MDF_API mdf_status mdf_signature_save(const mdf_signature* signature, const char* path);
MDF_API void mdf_signature_free(mdf_signature* signature);
MDF_API size_t mdf_signature_d_model(const mdf_signature* signature);
MDF_API size_t mdf_signature_n_instances(const mdf_signature* signature);
/* Copies layer `layer` (d_model doubles) into out. */
MDF_API mdf_status mdf_signature_layer(const mdf_signature* signature, size_t layer, double* out, size_t out_len);

/* Subcommands: extract, predict, sweep, lens, baseline, validate.
 * overrides_json may be NULL or an object with seed, jobs, out, baseline.
 * Relative paths in the config resolve against base_dir (NULL = cwd).
 * summary_out receives {"summary": {...}, "message": "..."}. */
MDF_API mdf_status mdf_run(const char* command, const char* config_json, const char* base_dir,
                           const char* overrides_json, char** summary_out);

/* Config hash as used in every output's provenance. */
MDF_API mdf_status mdf_config_hash(const char* config_json, char** hash_out);

#ifdef __cplusplus
}
#endif

#endif /* MDF_MDF_H_ */
