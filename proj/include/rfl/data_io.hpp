#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfl/model.hpp"
#include "rfl/rng.hpp"
#include "rfl/tensor.hpp"

namespace rfl {

/// Labeled image set. Pixels live in [0,1] (enforced at load), shape [N,C,H,W].
struct Dataset {
    Tensor images;
    std::vector<int> labels;
    int classes = 0;
    std::string name;

    std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
    void validate() const;  // labels < classes, pixels in range
};

struct SplitSpec {
    int train_per_class = -1;  // -1: everything not used by val
    int val_per_class = 0;
    bool official = false;     // input is already the official train split; carve val only
    std::string seed_label = "data-split";
};

struct Splits {
    Dataset train, val, test;
};

// IDX (big-endian headers): magic 2051 for images, 2049 for labels.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: 3073-byte records (1 label + 3x32x32 pixels).
Dataset load_cifar10_bin(const std::vector<std::string>& batch_paths);

// Procedural seven-segment digit corpus: deterministic given the stream, with
// per-sample translation, intensity jitter and pixel noise. Labels are
// remapped to 0..(hi-lo). This is the self-contained stand-in source/target
// task for transfer experiments.
Dataset make_synthetic_digits(int lo_class, int hi_class, int per_class, int side,
                              RngStream rng);

// Keep only classes in [lo, hi], remapping labels to 0..(hi-lo).
Dataset filter_classes(const Dataset& ds, int lo, int hi);

Splits split(const Dataset& ds, const SplitSpec& spec, const RngStream& rng);

// Batch assembly in the given index order.
void gather_batch(const Dataset& ds, const std::uint32_t* idx, std::int64_t count,
                  Tensor& images_out, std::vector<int>& labels_out, Dtype dtype = Dtype::f32);

// --- checkpoints ---------------------------------------------------------
// Binary format: magic "RFL1", u32 LE version, u32 LE entry count, then per
// entry: u16 LE name length + UTF-8 name, role u8, trainable u8, rank u8,
// dims u64 LE each, payload f32 LE. Model structure travels in reserved
// "meta.*" entries so a checkpoint reloads into a complete model.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// --- metrics CSV -----------------------------------------------------------
struct MetricsRow {
    std::string run_id;
    std::string stage;
    int epoch = 0;
    std::string split;
    std::string metric;
    double value = 0.0;
    double seconds = 0.0;
};

// Appends below existing rows (header written once); LF line endings,
// values with six decimals. Writes via temp-file + rename.
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);
// Distinct run ids present in a CSV (empty if the file does not exist).
std::vector<std::string> csv_run_ids(const std::string& path);

// --- PGM -----------------------------------------------------------------
void write_pgm(const std::string& path, int width, int height,
               const std::vector<std::uint8_t>& bytes);

// Atomic small-file write (temp + rename).
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace rfl
