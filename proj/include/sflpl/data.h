#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sflpl/tensor.h"

namespace sflpl {

struct Dataset {
  std::string name;
  Tensor inputs;  // [N, F]
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return inputs.sample_size(); }

  Dataset subset(std::span<const std::size_t> indices) const;
  /// Checks the label range, sample count and feature layout.
  void validate() const;
};

struct Shard {
  int client_id = 0;
  Dataset train;
  Dataset holdout;
  std::vector<std::size_t> train_indices;    // rows of the source dataset
  std::vector<std::size_t> holdout_indices;
};

struct Partition {
  std::vector<Shard> shards;
  Dataset remainder;  // every source row not assigned to a shard
  std::vector<std::size_t> remainder_indices;
};

// ---- MNIST IDX ------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

/// Pixels scaled to [0, 1], images flattened row-major to 784 features.
Dataset load_mnist_idx(const std::string& image_path,
                       const std::string& label_path);
Dataset parse_mnist_idx(std::span<const std::uint8_t> image_bytes,
                        std::span<const std::uint8_t> label_bytes);

/// Serializes to IDX (images are rescaled by 255 and rounded).
std::vector<std::uint8_t> encode_idx_images(const Dataset& data,
                                            std::size_t rows, std::size_t cols);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& data);

// ---- ECG beats CSV ------------------------------------------------------

inline constexpr std::string_view kEcgClassTokens = "NLRAV";

/// N=0, L=1, R=2, A=3, V=4.
int ecg_class_index(std::string_view token);

/// Rows of 124 numeric features followed by a class token. An optional
/// header row is skipped.
Dataset load_ecg_csv(const std::string& path);
Dataset parse_ecg_csv(std::istream& in, std::size_t features = 124);

// ---- Synthetic ----------------------------------------------------------

struct SynthOptions {
  // Class centres live in a latent space of this many dimensions and are
  // embedded into the feature space by a fixed random orthonormal map.
  std::size_t latent_dim = 16;
  // Minimum pairwise distance between class centres, in units of the
  // within-class standard deviation.
  double min_separation = 4.0;
  // Spread of the class centres around the origin, same units.
  double centre_spread = 2.4;
  // Isotropic noise added in feature space, relative to the latent scale.
  double feature_noise = 0.15;
};

/// Gaussian class clusters, exactly `n_per_class` samples per class,
/// interleaved by class. Deterministic in `seed`.
Dataset synth_dataset(int num_classes, std::size_t features,
                      std::size_t n_per_class, std::uint64_t seed,
                      const SynthOptions& options = {});

struct DigitSynthOptions {
  // Per-sample jitter of the stroke control points, in glyph-box units.
  double point_jitter = 0.03;
  double rotation_sd_deg = 5.0;
  double shear_sd = 0.08;
  double scale_sd = 0.08;
  double shift_sd_px = 0.6;
  double min_stroke_px = 1.0;
  double max_stroke_px = 2.6;
  double pixel_noise = 0.05;
};

/// 28x28 handwriting-like digits in [0, 1]: ten stroke templates, each
/// sample drawn with jittered points, a random affine map and a random pen
/// width, then rasterised with soft edges. Interleaved by class.
Dataset synth_digits(std::size_t n_per_class, std::uint64_t seed,
                     const DigitSynthOptions& options = {});

// ---- Splitting ------------------------------------------------------------

/// Seeded random permutation of [0, n).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

/// Random half/half split (the extra sample of an odd count goes to test).
TrainTestSplit split_half(const Dataset& data, std::uint64_t seed);

/// Standardizes every feature with the mean and standard deviation of
/// `reference`, applied to each dataset in `targets`.
void standardize_features(const Dataset& reference,
                          std::span<Dataset* const> targets);

/// K disjoint, equal shards drawn from a seeded permutation of `data`.
Partition partition(const Dataset& data, std::size_t num_clients,
                    std::size_t train_per_client,
                    std::size_t holdout_per_client, std::uint64_t seed);

}  // namespace sflpl
