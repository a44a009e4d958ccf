#ifndef TINYALIGN_EMBED_API_H
#define TINYALIGN_EMBED_API_H

/* Byte-level embedding boundary: load a model, track a face across RGBA
 * frames and composite makeup. Every call returns 0 or one of the codes
 * below. A session must not be used from two threads at once. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
  TA_OK = 0,
  TA_ERR_FORMAT = 1,
  TA_ERR_CHECKSUM = 2,
  TA_ERR_INVALID_ARGUMENT = 3,
  TA_ERR_TRACKING_LOST = 4,
  TA_ERR_NUMERIC = 5
};

/* Product records are 6 bytes: part id, r, g, b, opacity (0-255 maps to
 * 0-1), feather radius in pixels. Part ids: 0 upper lip, 1 lower lip,
 * 2 left cheek, 3 right cheek, 4 left eyelid, 5 right eyelid. */
#define TA_PRODUCT_RECORD_SIZE 6

typedef struct ta_session ta_session;

/* Parses a serialized model. On success *out owns the session and the
 * landmark count and network input size are written when non-null. */
int32_t ta_session_create(const uint8_t* model, size_t model_len, ta_session** out, uint32_t* num_landmarks,
                          uint32_t* input_size);

/* Frames are RGBA8 with stride 4 * width. seed_box (x0, y0, x1, y1 in
 * corner pixel coordinates) is required on the first call and after
 * tracking is lost, and re-seeds the tracker whenever given. Writes 2L
 * floats (x, y per landmark, frame pixels) to out; out_len counts floats. */
int32_t ta_session_track(ta_session* s, const uint8_t* rgba, uint32_t width, uint32_t height, const float* seed_box,
                         float* out, size_t out_len);

/* Composites the products over rgba into out_rgba (same size, may not
 * alias). landmarks holds 2L floats in frame pixels. */
int32_t ta_session_render(ta_session* s, const uint8_t* rgba, uint32_t width, uint32_t height, const float* landmarks,
                          size_t landmarks_len, const uint8_t* products, size_t products_len, uint8_t* out_rgba);

/* Message for the last failing call on this session; empty after success. */
const char* ta_session_last_error(const ta_session* s);

void ta_session_destroy(ta_session* s);

#ifdef __cplusplus
}
#endif

#endif
