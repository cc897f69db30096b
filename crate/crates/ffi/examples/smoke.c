/* Minimal C client: render, resolve alpha, run a session to completion,
 * analyse a small CSV. Exits non-zero on the first unexpected result. */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "dichoptic.h"

#define CHECK(expr)                                                         \
    do {                                                                    \
        DchStatus s_ = (expr);                                              \
        if (s_ != DCH_STATUS_OK) {                                          \
            const char *m_ = dch_last_error_message();                      \
            fprintf(stderr, "%s failed (%d): %s\n", #expr, (int)s_,         \
                    m_ ? m_ : "(no message)");                              \
            return 1;                                                       \
        }                                                                   \
    } while (0)

int main(void) {
    DchOpacity op = {0.2, 0.8, true};
    if (dch_resolve_alpha(DCH_EYE_LEFT, op) != 0.2 || dch_resolve_alpha(DCH_EYE_RIGHT, op) != 0.8) {
        fprintf(stderr, "resolve_alpha mismatch\n");
        return 1;
    }

    DchRenderer *r = NULL;
    CHECK(dch_renderer_new_default(&r));
    size_t len = 32 * 32 * 4;
    uint8_t *px = malloc(len);
    CHECK(dch_render_eye(r, DCH_EYE_LEFT, op, 0.5, 32, 32, px, len));
    if (dch_render_eye(r, DCH_EYE_LEFT, op, 0.5, 32, 32, px, len - 1) != DCH_STATUS_BUFFER_TOO_SMALL) {
        fprintf(stderr, "short buffer accepted\n");
        return 1;
    }
    DchImage *img = NULL;
    CHECK(dch_render_composite(r, op, 0.5, 32, 32, DCH_COMPOSITE_MODE_SIDE_BY_SIDE, &img));
    if (dch_image_width(img) != 64 || dch_image_height(img) != 32 ||
        memcmp(dch_image_data(img), px, 32 * 4) != 0) {
        fprintf(stderr, "side-by-side layout mismatch\n");
        return 1;
    }
    dch_image_free(img);
    free(px);
    dch_renderer_free(r);

    DchSession *s = NULL;
    CHECK(dch_session_new("C1", 0.01, 42, 1.0, &s));
    /* Briefing, T1 instructions, T1 down twice, confirm, T2 instructions,
     * T2 left up, confirm, T3 instructions, view A, view B, choose. */
    const uint8_t script[] = {7, 7, 6, 6, 7, 7, 1, 7, 7, 7, 7, 8};
    for (size_t i = 0; i < sizeof script; i++) {
        CHECK(dch_session_apply(s, script[i], (double)i, NULL));
    }
    if (dch_session_apply(s, 7, 99.0, NULL) != DCH_STATUS_ILLEGAL_COMMAND) {
        fprintf(stderr, "command after Done accepted\n");
        return 1;
    }
    char *json = NULL;
    CHECK(dch_session_export_json(s, &json));
    if (strstr(json, "\"t1_alpha\": 0.98") == NULL) {
        fprintf(stderr, "unexpected record: %s\n", json);
        return 1;
    }
    dch_string_free(json);
    dch_session_free(s);

    const char *csv =
        "participant_id,non_dichoptic_alpha,dichoptic_left,dichoptic_right,preference\n"
        "P1,0.50,0.30,0.70,Dichoptic\n"
        "P2,0.52,0.45,0.55,Dichoptic\n"
        "P3,0.48,0.50,0.50,NonDichoptic\n"
        "P4,0.51,0.20,0.60,Dichoptic\n";
    CHECK(dch_analyze_csv(csv, &json));
    if (strstr(json, "\"preference_proportion\": 0.75") == NULL) {
        fprintf(stderr, "unexpected stats: %s\n", json);
        return 1;
    }
    dch_string_free(json);

    if (dch_analyze_csv("", &json) != DCH_STATUS_PARSE_ERROR) {
        fprintf(stderr, "empty csv accepted\n");
        return 1;
    }
    puts("ok");
    return 0;
}
