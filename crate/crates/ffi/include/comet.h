#ifndef COMET_H
#define COMET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum CometStatus {
  COMET_STATUS_OK = 0,
  COMET_STATUS_NULL_POINTER = 1,
  COMET_STATUS_INVALID_UTF8 = 2,
  COMET_STATUS_DIMENSION = 3,
  COMET_STATUS_INDEX = 4,
  COMET_STATUS_CONTRACT = 5,
  COMET_STATUS_CONFIG = 6,
  COMET_STATUS_NUMERICAL = 7,
  COMET_STATUS_FORMAT = 8,
  COMET_STATUS_IO = 9,
  COMET_STATUS_BUFFER_TOO_SMALL = 10,
  COMET_STATUS_PANIC = 11,
} CometStatus;

// A generated or loaded dataset.
typedef struct CometDataset CometDataset;

// A trained selector bound to the dataset geometry it was trained on.
typedef struct CometSelector CometSelector;

typedef struct CometDatasetInfo {
  size_t samples;
  size_t classes;
  size_t channels;
  size_t height;
  size_t width;
} CometDatasetInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length
// without the terminator; pass `len = 0` to query it.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t comet_last_error(char *buf, size_t len);

// Generates a dataset from `key = value` configuration text (the same
// format the command line reads; unspecified keys take defaults).
//
// # Safety
// `config` must be a NUL-terminated string and `out` writable.
enum CometStatus comet_dataset_generate(const char *config, struct CometDataset **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum CometStatus comet_dataset_load(const char *path, struct CometDataset **out);

// # Safety
// `dataset` must come from this library; `path` must be NUL-terminated.
enum CometStatus comet_dataset_save(const struct CometDataset *dataset, const char *path);

// # Safety
// `dataset` must be null or a live handle from this library; it must not
// be used afterwards.
void comet_dataset_free(struct CometDataset *dataset);

// # Safety
// `dataset` must be a live handle and `out` writable.
enum CometStatus comet_dataset_info(const struct CometDataset *dataset,
                                    struct CometDatasetInfo *out);

// Label and split tag (0 train, 1 val, 2 test) of sample `index`.
//
// # Safety
// `dataset` must be a live handle; `label` and `split` writable.
enum CometStatus comet_dataset_label(const struct CometDataset *dataset,
                                     size_t index,
                                     size_t *label,
                                     uint8_t *split);

// Copies sample `index` as channel-major `C x H x W` doubles in `[0, 1]`.
//
// # Safety
// `dataset` must be a live handle; `out` valid for `len` doubles.
enum CometStatus comet_dataset_image(const struct CometDataset *dataset,
                                     size_t index,
                                     double *out,
                                     size_t len);

// Copies the ground-truth mask of sample `index` as `H x W` bytes (0/1).
//
// # Safety
// `dataset` must be a live handle; `out` valid for `len` bytes.
enum CometStatus comet_dataset_gt_mask(const struct CometDataset *dataset,
                                       size_t index,
                                       uint8_t *out,
                                       size_t len);

// Loads a selector checkpoint trained on `dataset` (whose geometry and
// input statistics the network uses).
//
// # Safety
// `dataset` must be a live handle, `path` NUL-terminated, `out` writable.
enum CometStatus comet_selector_load(const struct CometDataset *dataset,
                                     const char *path,
                                     struct CometSelector **out);

// # Safety
// `selector` must be null or a live handle; it must not be used afterwards.
void comet_selector_free(struct CometSelector *selector);

// Attribution map (`H x W`, values in `[0, 1]`) of one `C x H x W` image.
//
// # Safety
// `selector` must be a live handle; `image` valid for `image_len` doubles
// and `map` for `map_len` doubles.
enum CometStatus comet_selector_map(const struct CometSelector *selector,
                                    const double *image,
                                    size_t image_len,
                                    double *map,
                                    size_t map_len);

// Pooled pixel average precision of `n_images` maps against 0/1 masks,
// both row-major `n_images x H x W`.
//
// # Safety
// `maps` and `gts` must be valid for `n_images * height * width`
// elements; `out` writable.
enum CometStatus comet_pxap(const double *maps,
                            const uint8_t *gts,
                            size_t n_images,
                            size_t height,
                            size_t width,
                            size_t n_thresholds,
                            double *out);

// Area under the mean-IoU threshold curve; arguments as [`comet_pxap`].
//
// # Safety
// As [`comet_pxap`].
enum CometStatus comet_iou_auc(const double *maps,
                               const uint8_t *gts,
                               size_t n_images,
                               size_t height,
                               size_t width,
                               size_t n_thresholds,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMET_H */
