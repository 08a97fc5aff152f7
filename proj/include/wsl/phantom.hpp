#pragma once

// Synthetic lung-phantom slices with known lesion masks, the on-disk dataset
// index, and patient-level k-fold splitting.

#include "wsl/preprocess.hpp"
#include "wsl/tensor.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace wsl {

enum class Label : int { NP = 0, CAP = 1, COVID = 2 };
constexpr int kPhantomClasses = 3;
const char* label_name(int label);

struct PhantomSample {
    Tensor image;       // [H,W] in [0,1]
    Label label = Label::NP;
    Tensor lesion_mask; // [H,W] of 0/1
    Tensor lung_mask;   // [H,W] of 0/1, the two lung ellipses
    int patient_id = 0;
    int slice_index = 0;
};

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Two elliptical lungs on a dark field. Vessel-like bright lines appear in
// every class and are never part of the mask; CAP adds one peripheral
// Gaussian lesion, COVID adds 2-5 lesions anywhere in the lungs.
std::vector<PhantomSample> generate_patient(int patient_id, Label label, int slices_per_patient, std::size_t size,
                                            Rng& rng);

struct DatasetRecord {
    std::string image_path; // relative to the index directory
    std::string mask_path;
    int label = 0;
    int patient_id = 0;
    int slice_index = 0;
};

struct DatasetIndex {
    std::filesystem::path root;
    std::vector<DatasetRecord> records;
    std::vector<std::size_t> class_counts;

    std::size_t num_classes() const { return class_counts.size(); }
    std::filesystem::path image_file(const DatasetRecord& r) const { return root / r.image_path; }
    std::filesystem::path mask_file(const DatasetRecord& r) const { return root / r.mask_path; }
    std::vector<int> patients() const;
};

inline constexpr const char* kIndexFileName = "index.tsv";

struct DatasetSpec {
    int patients_per_class = 10;
    int slices_per_patient = 8;
    std::size_t size = 64;
    std::uint64_t seed = 0;
    std::array<double, kPhantomClasses> class_ratio{1.0, 1.0, 1.0};
};

int patients_for_class(const DatasetSpec& spec, int label);

// Patients are numbered consecutively, class by class. Each patient draws
// from its own stream mix_seed(seed, patient_id).
std::vector<PhantomSample> generate_samples(const DatasetSpec& spec);

// Writes images/ and masks/ as WST1 files plus index.tsv; returns the index.
DatasetIndex generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

// Text index: "wsds v1" header, then
// image_path \t mask_path \t label \t patient_id \t slice_index per line.
void write_index(const DatasetIndex& index, const std::filesystem::path& file);
DatasetIndex read_index(const std::filesystem::path& file);
std::string format_index(const DatasetIndex& index);

struct FoldSplit {
    int fold_index = 0;
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
};

// Patients are shuffled per class and dealt round-robin into k groups; fold
// i tests on group i, validates on group (i + 1) mod k, trains on the rest.
std::vector<FoldSplit> kfold_split(const DatasetIndex& index, int k, std::uint64_t seed);

// Throws ContractError unless the sets are disjoint and cover `patients`.
void check_split(const FoldSplit& split, const std::vector<int>& patients);

// 8-connected component count of a binary mask.
std::size_t count_components(const Tensor& mask);

} // namespace wsl
