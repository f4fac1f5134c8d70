#ifndef RPLSIM_H
#define RPLSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RplStatus {
  RPL_STATUS_OK = 0,
  RPL_STATUS_NULL_POINTER = 1,
  RPL_STATUS_INVALID_ARGUMENT = 2,
  RPL_STATUS_PARSE = 3,
  RPL_STATUS_IO = 4,
  RPL_STATUS_SIMULATION = 5,
  RPL_STATUS_BUFFER_TOO_SMALL = 6,
  RPL_STATUS_PANIC = 7,
} RplStatus;

typedef enum RplMetricKind {
  RPL_METRIC_KIND_ETX = 0,
  /**
   * Uses the `param` argument as the exponent N.
   */
  RPL_METRIC_KIND_ETX_N = 1,
  /**
   * Uses the `param` argument as the retry count R.
   */
  RPL_METRIC_KIND_LR = 2,
} RplMetricKind;

typedef enum RplLossCause {
  RPL_LOSS_CAUSE_MAC_DROP = 0,
  RPL_LOSS_CAUSE_NO_ROUTE = 1,
  RPL_LOSS_CAUSE_SPURIOUS_DUPLICATE = 2,
  RPL_LOSS_CAUSE_QUEUE_OVERFLOW = 3,
} RplLossCause;

typedef enum RplReportFormat {
  RPL_REPORT_FORMAT_JSON = 0,
  RPL_REPORT_FORMAT_CSV = 1,
  RPL_REPORT_FORMAT_BOTH = 2,
} RplReportFormat;

typedef struct RplConfig RplConfig;

typedef struct RplReport RplReport;

typedef struct RplTopology RplTopology;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf`.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or NULL; `needed` must be valid or
 * NULL.
 */
enum RplStatus rpl_last_error(char *buf, size_t len, size_t *needed);

/**
 * Delivery probability of a path whose links have PRRs `prrs[0..len]`,
 * each hop allowing `retries` retransmissions.
 *
 * # Safety
 * `prrs` must point to `len` doubles (may be NULL when `len == 0`); `out`
 * must be valid.
 */
enum RplStatus rpl_path_delivery(const double *prrs, size_t len, uint32_t retries, double *out);

/**
 * Rank through a parent advertising `parent_rank` over a link of PRR
 * `prr`.
 *
 * # Safety
 * `out` must be valid.
 */
enum RplStatus rpl_rank(enum RplMetricKind kind,
                        double param,
                        double parent_rank,
                        double prr,
                        double *out);

/**
 * Rank of the root under the given metric.
 *
 * # Safety
 * `out` must be valid.
 */
enum RplStatus rpl_root_rank(enum RplMetricKind kind, double param, double *out);

/**
 * 95% upper bound on the loss rate (`3 / n_sent`) with no losses, the
 * observed rate otherwise.
 *
 * # Safety
 * `out` must be valid.
 */
enum RplStatus rpl_rule_of_three(uint64_t n_sent, uint64_t losses, double *out);

/**
 * Source-route header bytes for `hops`, with node addresses given as
 * `node_count` consecutive 8-byte interface identifiers.
 *
 * # Safety
 * `addrs` must point to `8 * node_count` bytes, `hops` to `hop_count`
 * node ids (may be NULL when `hop_count == 0`); `out` must be valid.
 */
enum RplStatus rpl_header_size(const uint8_t *addrs,
                               size_t node_count,
                               uint16_t root,
                               const uint16_t *hops,
                               size_t hop_count,
                               bool prefix_shared,
                               size_t *out);

/**
 * [`rpl_header_size`] for the homogeneous address plan, where addresses
 * differ only in their last two bytes.
 *
 * # Safety
 * `hops` must point to `hop_count` node ids (may be NULL when
 * `hop_count == 0`); `out` must be valid.
 */
enum RplStatus rpl_header_size_homogeneous(size_t node_count,
                                           uint16_t root,
                                           const uint16_t *hops,
                                           size_t hop_count,
                                           bool prefix_shared,
                                           size_t *out);

/**
 * # Safety
 * `out` must be valid.
 */
enum RplStatus rpl_config_default(struct RplConfig **out);

/**
 * Parse a key-value scenario. Relative trace paths resolve against the
 * current directory.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be valid.
 */
enum RplStatus rpl_config_parse(const char *text, struct RplConfig **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum RplStatus rpl_config_from_file(const char *path, struct RplConfig **out);

/**
 * # Safety
 * `cfg` must be a live handle or NULL.
 */
enum RplStatus rpl_config_set_seed(struct RplConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be a live handle or NULL.
 */
enum RplStatus rpl_config_set_duration(struct RplConfig *cfg,
                                       uint64_t duration_s,
                                       uint64_t warmup_s);

/**
 * # Safety
 * `cfg` must come from an `rpl_config_*` constructor or be NULL.
 */
void rpl_config_free(struct RplConfig *cfg);

/**
 * Synthetic topology with default generator parameters.
 *
 * # Safety
 * `out` must be valid.
 */
enum RplStatus rpl_topology_synthetic(size_t node_count, uint64_t seed, struct RplTopology **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum RplStatus rpl_topology_load_trace(const char *path,
                                       uint64_t window_ms,
                                       uint16_t root,
                                       struct RplTopology **out);

/**
 * # Safety
 * `topo` must be a live handle or NULL; `out` must be valid.
 */
enum RplStatus rpl_topology_node_count(const struct RplTopology *topo, size_t *out);

/**
 * # Safety
 * `topo` must come from an `rpl_topology_*` constructor or be NULL.
 */
void rpl_topology_free(struct RplTopology *topo);

/**
 * Run the scenario. `topo` may be NULL to use the config's own topology
 * source.
 *
 * # Safety
 * `cfg` must be a live handle, `topo` a live handle or NULL, `out` valid.
 */
enum RplStatus rpl_run(const struct RplConfig *cfg,
                       const struct RplTopology *topo,
                       struct RplReport **out);

/**
 * # Safety
 * `report` must be a live handle or NULL; `out` must be valid.
 */
enum RplStatus rpl_report_packets_sent(const struct RplReport *report, uint64_t *out);

/**
 * # Safety
 * `report` must be a live handle or NULL; `out` must be valid.
 */
enum RplStatus rpl_report_delivered(const struct RplReport *report, uint64_t *out);

/**
 * # Safety
 * `report` must be a live handle or NULL; `out` must be valid.
 */
enum RplStatus rpl_report_losses(const struct RplReport *report,
                                 enum RplLossCause cause,
                                 uint64_t *out);

/**
 * # Safety
 * `report` must be a live handle or NULL; `out` must be valid.
 */
enum RplStatus rpl_report_loss_rate(const struct RplReport *report, double *out);

/**
 * Serialize the report as JSON into `buf`. Call with `buf == NULL` to
 * learn the size through `needed`.
 *
 * # Safety
 * `report` must be a live handle; `buf` valid for `len` bytes or NULL;
 * `needed` valid or NULL.
 */
enum RplStatus rpl_report_json(const struct RplReport *report,
                               char *buf,
                               size_t len,
                               size_t *needed);

/**
 * Write report files into `out_dir`, creating it if needed.
 *
 * # Safety
 * `report` must be a live handle; `out_dir` a NUL-terminated string.
 */
enum RplStatus rpl_report_write(const struct RplReport *report,
                                const char *out_dir,
                                enum RplReportFormat format);

/**
 * # Safety
 * `report` must come from [`rpl_run`] or be NULL.
 */
void rpl_report_free(struct RplReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RPLSIM_H */
