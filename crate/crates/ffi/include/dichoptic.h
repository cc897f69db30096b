#ifndef DICHOPTIC_H
#define DICHOPTIC_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum DchCompositeMode {
  DCH_COMPOSITE_MODE_SIDE_BY_SIDE = 0,
  DCH_COMPOSITE_MODE_ANAGLYPH = 1,
} DchCompositeMode;

typedef enum DchEye {
  DCH_EYE_LEFT = 0,
  DCH_EYE_RIGHT = 1,
} DchEye;

typedef enum DchStatus {
  DCH_STATUS_OK = 0,
  DCH_STATUS_NULL_POINTER = 1,
  DCH_STATUS_INVALID_ARGUMENT = 2,
  DCH_STATUS_PARSE_ERROR = 3,
  DCH_STATUS_ILLEGAL_COMMAND = 4,
  DCH_STATUS_INCOMPLETE_SESSION = 5,
  DCH_STATUS_INSUFFICIENT_DATA = 6,
  DCH_STATUS_BUFFER_TOO_SMALL = 7,
  DCH_STATUS_INTERNAL = 8,
} DchStatus;

// An 8-bit RGBA image, row-major, top row first.
typedef struct DchImage DchImage;

// Scene plus stereo rig.
typedef struct DchRenderer DchRenderer;

// One participant's experiment session.
typedef struct DchSession DchSession;

typedef struct DchOpacity {
  double left_alpha;
  double right_alpha;
  bool dichoptic_enabled;
} DchOpacity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *dch_last_error_message(void);

// # Safety
// `s` must be NULL or a string returned by this library and not yet freed.
void dch_string_free(char *s);

// Occluder alpha used for `eye` (a `DchEye` value) under `opacity`, or NaN
// for an unknown eye.
double dch_resolve_alpha(uint32_t eye, struct DchOpacity opacity);

// Renderer for the default scene and rig.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum DchStatus dch_renderer_new_default(struct DchRenderer **out);

// Renderer configured from TOML text with `[scene]` and `[rig]` tables.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum DchStatus dch_renderer_new_from_toml(const char *toml, struct DchRenderer **out);

// # Safety
// `renderer` must be NULL or a handle from `dch_renderer_new_*` not yet freed.
void dch_renderer_free(struct DchRenderer *renderer);

// Render one eye (a `DchEye` value) into `out_rgba`, which must hold `width * height * 4` bytes.
//
// # Safety
// `renderer` must be a live handle; `out_rgba` must point to `out_len`
// writable bytes.
enum DchStatus dch_render_eye(const struct DchRenderer *renderer,
                              uint32_t eye,
                              struct DchOpacity opacity,
                              double t,
                              uint32_t width,
                              uint32_t height,
                              uint8_t *out_rgba,
                              size_t out_len);

// Render both eyes and composite them (a `DchCompositeMode` value) into a new image.
//
// # Safety
// `renderer` must be a live handle; `out` must be writable.
enum DchStatus dch_render_composite(const struct DchRenderer *renderer,
                                    struct DchOpacity opacity,
                                    double t,
                                    uint32_t width,
                                    uint32_t height,
                                    uint32_t mode,
                                    struct DchImage **out);

// # Safety
// `image` must be a live handle.
uint32_t dch_image_width(const struct DchImage *image);

// # Safety
// `image` must be a live handle.
uint32_t dch_image_height(const struct DchImage *image);

// Pixel bytes, valid until the image is freed. Length is `width * height * 4`.
//
// # Safety
// `image` must be a live handle.
const uint8_t *dch_image_data(const struct DchImage *image);

// # Safety
// `image` must be NULL or a live handle.
void dch_image_free(struct DchImage *image);

// Start a session with the default scene and rig.
//
// # Safety
// `participant_id` must be a NUL-terminated string; `out` must be writable.
enum DchStatus dch_session_new(const char *participant_id,
                               double alpha_step,
                               uint64_t rng_seed,
                               double initial_alpha,
                               struct DchSession **out);

// # Safety
// `session` must be NULL or a live handle.
void dch_session_free(struct DchSession *session);

// Apply command `code` (1 through 8, see the wire protocol) at time `t`.
// On success the opacity now on screen is written to `out_opacity` if it is
// not NULL. A rejected command leaves the session unchanged.
//
// # Safety
// `session` must be a live handle; `out_opacity` must be NULL or writable.
enum DchStatus dch_session_apply(struct DchSession *session,
                                 uint8_t code,
                                 double t,
                                 struct DchOpacity *out_opacity);

// Current phase as its ordinal: 0 Briefing through 9 Done.
//
// # Safety
// `session` must be a live handle.
int32_t dch_session_phase(const struct DchSession *session);

// # Safety
// `session` must be a live handle; `out` must be writable.
enum DchStatus dch_session_opacity(const struct DchSession *session, struct DchOpacity *out);

// Session record as JSON. Fails with `IncompleteSession` before `Done`.
//
// # Safety
// `session` must be a live handle; `out_json` must be writable.
enum DchStatus dch_session_export_json(const struct DchSession *session, char **out_json);

// Analyse CSV text with default options; the statistics are returned as JSON.
//
// # Safety
// `csv` must be a NUL-terminated string; `out_json` must be writable.
enum DchStatus dch_analyze_csv(const char *csv, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DICHOPTIC_H */
