#ifndef FLOWGUARD_H
#define FLOWGUARD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum FgStatus {
  FG_STATUS_OK = 0,
  FG_STATUS_NULL_POINTER = 1,
  FG_STATUS_INVALID_ARGUMENT = 2,
  FG_STATUS_IO = 3,
  FG_STATUS_FORMAT = 4,
  FG_STATUS_DIM_MISMATCH = 5,
  FG_STATUS_INSUFFICIENT_TRAJECTORY = 6,
  FG_STATUS_NUMERICAL = 7,
  FG_STATUS_PANIC = 8,
} FgStatus;

// Opaque affine decoder.
typedef struct FgDecoder FgDecoder;

// Opaque guard: one affine decoder, filter, classifier and step set.
typedef struct FgGuard FgGuard;

// Streaming session over one trajectory.
typedef struct FgSession FgSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf`, NUL
// terminated and truncated to `len` bytes. Returns the full message length.
//
// # Safety
// `buf` must be writable for `len` bytes or be null.
size_t fg_last_error(char *buf, size_t len);

// Loads an affine decoder directory.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
enum FgStatus fg_decoder_load(const char *dir, struct FgDecoder **out);

// Flat latent and image lengths.
//
// # Safety
// `dec` must come from [`fg_decoder_load`]; outputs must be writable.
enum FgStatus fg_decoder_lengths(const struct FgDecoder *dec,
                                 size_t *latent_len,
                                 size_t *image_len);

// Decodes `batch` latents laid out back to back into `images`.
//
// # Safety
// `latents` must hold `batch * latent_len` floats and `images`
// `batch * image_len`.
enum FgStatus fg_decoder_decode(const struct FgDecoder *dec,
                                const float *latents,
                                size_t batch,
                                float *images);

// # Safety
// `dec` must come from [`fg_decoder_load`] or be null.
void fg_decoder_free(struct FgDecoder *dec);

// Builds a guard from a classifier directory and a decoder directory.
//
// # Safety
// Strings must be NUL-terminated; `steps` must hold `n_steps` entries.
enum FgStatus fg_guard_load(const char *classifier_dir,
                            const char *decoder_dir,
                            const size_t *steps,
                            size_t n_steps,
                            double threshold,
                            double lpf_r,
                            struct FgGuard **out);

// Scores one latent: the estimated probability of the target content.
//
// # Safety
// `latent` must hold `len` floats; `score` must be writable.
enum FgStatus fg_guard_score(const struct FgGuard *guard,
                             const float *latent,
                             size_t len,
                             double *score);

// # Safety
// `guard` must come from [`fg_guard_load`] or be null. Open sessions keep
// their own copy and stay usable.
void fg_guard_free(struct FgGuard *guard);

// Opens a session. The session keeps its own copy of the guard.
//
// # Safety
// `guard` must come from [`fg_guard_load`]; `out` must be writable.
enum FgStatus fg_session_new(const struct FgGuard *guard, struct FgSession **out);

// Feeds the latent after generation step `step`. `triggered` becomes 1 once
// the guard fires, at which point generation should stop.
//
// # Safety
// `session` must come from [`fg_session_new`]; `latent` must hold `len`
// floats; `triggered` must be writable.
enum FgStatus fg_session_push(struct FgSession *session,
                              size_t step,
                              const float *latent,
                              size_t len,
                              uint8_t *triggered);

// Closes the stream and reports the verdict. `trigger_step` is -1 when the
// guard never fired. Further pushes fail; the handle must still be freed.
//
// # Safety
// `session` must come from [`fg_session_new`]; outputs must be writable.
enum FgStatus fg_session_finish(struct FgSession *session,
                                uint8_t *label,
                                int64_t *trigger_step,
                                double *max_score);

// # Safety
// `session` must come from [`fg_session_new`] or be null.
void fg_session_free(struct FgSession *session);

// Low-pass filters `channels` planes of `height * width` floats in place.
//
// # Safety
// `data` must hold `channels * height * width` floats.
enum FgStatus fg_lowpass(float *data, size_t channels, size_t height, size_t width, double r);

// Cumulative signal fraction at diffusion time `t` of a linear schedule.
//
// # Safety
// `out` must be writable.
enum FgStatus fg_alpha_bar(size_t total_steps,
                           double beta_min,
                           double beta_max,
                           size_t t,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWGUARD_H */
