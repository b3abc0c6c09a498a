#ifndef V6FRAG_H
#define V6FRAG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

#define V6F_MODEL_SP 1

#define V6F_MODEL_THREE_FRAGMENT 2

#define V6F_MODEL_NEW 4

#define V6F_MODEL_RFC9099 8

#define V6F_MODEL_ALL 15

#define V6F_MODE_SINGLE 1

#define V6F_MODE_REPEAT 2

#define V6F_MODE_MULTI 4

#define V6F_MODE_ALL 7

/**
 * Status codes.
 */
typedef enum V6fStatus {
  V6F_STATUS_OK = 0,
  V6F_STATUS_NULL_POINTER = 1,
  V6F_STATUS_INVALID_ARGUMENT = 2,
  V6F_STATUS_OUT_OF_RANGE = 3,
  V6F_STATUS_BUFFER_TOO_SMALL = 4,
  V6F_STATUS_INTERNAL = 5,
} V6fStatus;

/**
 * Reassembly policies, for `v6f_campaign_expected_replies`.
 */
typedef enum V6fPolicy {
  V6F_POLICY_FIRST = 0,
  V6F_POLICY_LAST = 1,
  V6F_POLICY_BSD = 2,
  V6F_POLICY_BSD_RIGHT = 3,
  V6F_POLICY_LINUX = 4,
  V6F_POLICY_FRAG_FIRST_WINS = 5,
  V6F_POLICY_FRAG_LAST_WINS = 6,
  V6F_POLICY_RFC5722_STRICT = 7,
} V6fPolicy;

/**
 * Pattern tables, for `v6f_pattern_fill`.
 */
typedef enum V6fParity {
  V6F_PARITY_ODD = 0,
  V6F_PARITY_EVEN = 1,
} V6fParity;

/**
 * Opaque campaign handle.
 */
typedef struct V6fCampaign V6fCampaign;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a campaign from model and mode bit masks.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle pointer.
 */
enum V6fStatus v6f_campaign_build(uint32_t models,
                                  uint32_t modes,
                                  uint64_t seed,
                                  struct V6fCampaign **out);

/**
 * Number of cases.
 *
 * # Safety
 * `campaign` must come from `v6f_campaign_build`; `out` must be writable.
 */
enum V6fStatus v6f_campaign_len(const struct V6fCampaign *campaign, uintptr_t *out);

/**
 * Copies the NUL-terminated case id into `buf`. `needed` (optional)
 * receives the required size including the terminator.
 *
 * # Safety
 * `campaign` must come from `v6f_campaign_build`; `buf` must hold `buf_len`
 * writable bytes; `needed` may be null.
 */
enum V6fStatus v6f_campaign_case_id(const struct V6fCampaign *campaign,
                                    uintptr_t index,
                                    char *buf,
                                    uintptr_t buf_len,
                                    uintptr_t *needed);

/**
 * Echo replies the oracle predicts for case `index` under `policy`
 * (a `V6fPolicy` value).
 *
 * # Safety
 * `campaign` must come from `v6f_campaign_build`; `out` must be writable.
 */
enum V6fStatus v6f_campaign_expected_replies(const struct V6fCampaign *campaign,
                                             uintptr_t index,
                                             uint32_t policy,
                                             uintptr_t *out);

/**
 * Releases a campaign. Null is ignored.
 *
 * # Safety
 * `campaign` must come from `v6f_campaign_build` and not be used afterwards.
 */
void v6f_campaign_free(struct V6fCampaign *campaign);

/**
 * Upper-layer checksum of `data` over the IPv6 pseudo-header.
 *
 * # Safety
 * `src` and `dst` must point to 16 bytes each; `data` to `len` bytes (may be
 * null when `len` is 0); `out` must be writable.
 */
enum V6fStatus v6f_internet_checksum(const uint8_t *src,
                                     const uint8_t *dst,
                                     uint8_t next_header,
                                     const uint8_t *data,
                                     uintptr_t len,
                                     uint16_t *out);

/**
 * Fills `units` 8-byte units of pattern `label` ('A'..'F') into `buf`.
 *
 * # Safety
 * `buf` must hold `buf_len` writable bytes.
 */
enum V6fStatus v6f_pattern_fill(char label,
                                uint32_t parity,
                                uintptr_t units,
                                uint8_t *buf,
                                uintptr_t buf_len);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `buf_len > 0`). Returns the full message length.
 *
 * # Safety
 * `buf` must hold `buf_len` writable bytes, or be null.
 */
uintptr_t v6f_last_error_message(char *buf, uintptr_t buf_len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *v6f_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* V6FRAG_H */
