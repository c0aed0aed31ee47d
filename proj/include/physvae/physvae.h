/* Public C API of the physvae shared library.
 *
 * All functions return pv_status; on failure pv_error_message() holds a
 * human-readable description of the most recent error on the calling thread.
 * Status codes match the CLI exit codes. */

#ifndef PHYSVAE_H
#define PHYSVAE_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pv_status {
  PV_OK = 0,
  PV_ERR_CONFIG = 2,  /* bad config / schema / argument */
  PV_ERR_IO = 3,      /* filesystem or file-format failure */
  PV_ERR_RUNTIME = 4  /* runtime abort (non-finite loss, ...) */
} pv_status;

/* Library semantic version, e.g. "1.0.0". */
const char* pv_version(void);

/* Description of the calling thread's most recent error; "" when none. The
 * pointer stays valid until the next failing call on the same thread. */
const char* pv_error_message(void);

/* Execute one pipeline command. command is one of: synth, extract, train,
 * embed, segment, metrics, manifold, render. request_json is a JSON object
 * {"config": {...run configuration...}, "args": {...command arguments...}};
 * both members are optional where the command allows defaults. Artifacts are
 * written under the configured output directory. */
pv_status pv_run(const char* command, const char* request_json);

/* Opaque handle to a trained model loaded from a checkpoint file. */
typedef struct pv_model pv_model;

pv_status pv_model_load(const char* path, pv_model** out);
void pv_model_free(pv_model* model);

/* JSON summary of the model (patch side, latent layout, layer sizes) written
 * into buf (NUL-terminated, truncated to buflen). */
pv_status pv_model_info(const pv_model* model, char* buf, size_t buflen);

#ifdef __cplusplus
}
#endif

#endif /* PHYSVAE_H */
