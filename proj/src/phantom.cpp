#include "wsl/phantom.hpp"

#include "wsl/kernels.hpp"
#include "wsl/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace wsl {

const char* label_name(int label) {
    switch (label) {
    case 0: return "NP";
    case 1: return "CAP";
    case 2: return "COVID";
    default: return "?";
    }
}

namespace {

constexpr double kField = 0.05;
constexpr double kFieldNoise = 0.01;
constexpr double kLung = 0.25;
constexpr double kLungNoise = 0.03;
constexpr double kVessel = 0.5;
constexpr double kCapPeak = 0.65;
// Blob sigma chosen so the contribution falls to 10% of its peak at the radius.
const double kSigmaPerRadius = 1.0 / std::sqrt(2.0 * std::log(10.0));

struct Ellipse {
    double cy, cx, ry, rx;
    double rho(double y, double x) const {
        const double u = (y - cy) / ry, v = (x - cx) / rx;
        return std::sqrt(u * u + v * v);
    }
};

struct Blob {
    double cy, cx, radius, amplitude;
};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::array<Ellipse, 2> draw_lungs(Rng& rng, double n) {
    std::array<Ellipse, 2> lungs{};
    const double cy = n * (0.5 + uniform(rng, -0.02, 0.02));
    for (int side = 0; side < 2; ++side) {
        const double cx = n * ((side == 0 ? 0.30 : 0.70) + uniform(rng, -0.01, 0.01));
        lungs[side] = {cy, cx, n * 0.33 * uniform(rng, 0.95, 1.05), n * 0.17 * uniform(rng, 0.95, 1.05)};
    }
    return lungs;
}

bool disk_inside(const Ellipse& e, double cy, double cx, double r, std::size_t n) {
    const auto lo_y = static_cast<std::ptrdiff_t>(std::floor(cy - r)), hi_y = static_cast<std::ptrdiff_t>(std::ceil(cy + r));
    const auto lo_x = static_cast<std::ptrdiff_t>(std::floor(cx - r)), hi_x = static_cast<std::ptrdiff_t>(std::ceil(cx + r));
    const auto sn = static_cast<std::ptrdiff_t>(n);
    for (auto y = lo_y; y <= hi_y; ++y)
        for (auto x = lo_x; x <= hi_x; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            if (dy * dy + dx * dx > r * r) continue;
            if (y < 0 || x < 0 || y >= sn || x >= sn) return false;
            if (e.rho(static_cast<double>(y), static_cast<double>(x)) > 0.97) return false;
        }
    return true;
}

// Tries to place a disk of the given radius with normalized lung radius in
// [rho_lo, rho_hi), clear of `others` by at least 2 px.
bool place_blob(Rng& rng, const std::array<Ellipse, 2>& lungs, double radius, double rho_lo, double rho_hi,
                const std::vector<Blob>& others, std::size_t n, double& cy, double& cx) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        const Ellipse& e = lungs[static_cast<std::size_t>(uniform_int(rng, 0, 1))];
        const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double rho = uniform(rng, rho_lo, rho_hi);
        cy = e.cy + rho * e.ry * std::sin(phi);
        cx = e.cx + rho * e.rx * std::cos(phi);
        if (!disk_inside(e, cy, cx, radius, n)) continue;
        bool clear = true;
        for (const auto& o : others) {
            const double d = std::hypot(cy - o.cy, cx - o.cx);
            if (d < radius + o.radius + 2.0) {
                clear = false;
                break;
            }
        }
        if (clear) return true;
    }
    return false;
}

std::vector<Blob> draw_lesions(Rng& rng, Label label, const std::array<Ellipse, 2>& lungs, std::size_t size) {
    const double n = static_cast<double>(size);
    std::vector<Blob> blobs;
    if (label == Label::NP) return blobs;
    for (int restart = 0; restart < 50; ++restart) {
        blobs.clear();
        if (label == Label::CAP) {
            for (int attempt = 0; attempt < 20 && blobs.empty(); ++attempt) {
                const double r = n * uniform(rng, 0.03, 0.06);
                double cy = 0, cx = 0;
                if (place_blob(rng, lungs, r, 0.6, 1.0, blobs, size, cy, cx))
                    blobs.push_back({cy, cx, r, kCapPeak - kLung});
            }
            if (!blobs.empty()) return blobs;
            continue;
        }
        const int count = uniform_int(rng, 2, 5);
        bool ok = true;
        for (int b = 0; b < count && ok; ++b) {
            ok = false;
            for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
                const double r = n * uniform(rng, 0.03, 0.12);
                const bool peripheral = uniform(rng, 0.0, 1.0) < 0.5;
                double cy = 0, cx = 0;
                if (place_blob(rng, lungs, r, peripheral ? 0.6 : 0.0, peripheral ? 1.0 : 0.6, blobs, size, cy, cx)) {
                    blobs.push_back({cy, cx, r, uniform(rng, 0.6, 0.8) - kLung});
                    ok = true;
                }
            }
        }
        if (ok) return blobs;
    }
    throw GenerationError("phantom size " + std::to_string(size) + " too small to place lesions");
}

void draw_vessels(Rng& rng, const std::array<Ellipse, 2>& lungs, Tensor& img, const Tensor& lung_mask) {
    const std::size_t n = img.dim(0);
    const int count = uniform_int(rng, 1, 3);
    for (int v = 0; v < count; ++v) {
        const Ellipse& e = lungs[static_cast<std::size_t>(uniform_int(rng, 0, 1))];
        const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double rho = uniform(rng, 0.0, 0.7);
        const double y0 = e.cy + rho * e.ry * std::sin(phi), x0 = e.cx + rho * e.rx * std::cos(phi);
        const double dir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double len = e.ry * uniform(rng, 0.25, 0.5);
        const double y1 = y0 + len * std::sin(dir), x1 = x0 + len * std::cos(dir);
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                if (lung_mask.at(y, x) == 0.0) continue;
                const double py = static_cast<double>(y) - y0, px = static_cast<double>(x) - x0;
                const double dy = y1 - y0, dx = x1 - x0;
                const double t = std::clamp((py * dy + px * dx) / (dy * dy + dx * dx), 0.0, 1.0);
                const double d = std::hypot(py - t * dy, px - t * dx);
                if (d <= 0.5) img.at(y, x) = std::max(img.at(y, x), kVessel);
            }
    }
}

std::string sample_name(const char* dir, int patient, int slice) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s/p%04d_s%02d.wst", dir, patient, slice);
    return buf;
}

} // namespace

std::vector<PhantomSample> generate_patient(int patient_id, Label label, int slices_per_patient, std::size_t size,
                                            Rng& rng) {
    if (size < 32) throw GenerationError("phantom size must be >= 32, got " + std::to_string(size));
    if (slices_per_patient < 1) throw ContractError("slices_per_patient must be >= 1");
    const double n = static_cast<double>(size);
    const auto lungs = draw_lungs(rng, n);
    Tensor lung_mask({size, size});
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            for (const auto& e : lungs)
                if (e.rho(static_cast<double>(y), static_cast<double>(x)) <= 1.0) lung_mask.at(y, x) = 1.0;

    std::normal_distribution<double> field_noise(0.0, kFieldNoise), lung_noise(0.0, kLungNoise);
    std::vector<PhantomSample> out;
    for (int s = 0; s < slices_per_patient; ++s) {
        PhantomSample smp{Tensor({size, size}), label, Tensor({size, size}), lung_mask, patient_id, s};
        Tensor& img = smp.image;
        for (std::size_t i = 0; i < img.size(); ++i)
            img[i] = lung_mask[i] != 0.0 ? kLung + lung_noise(rng) : kField + field_noise(rng);
        draw_vessels(rng, lungs, img, lung_mask);
        const auto blobs = draw_lesions(rng, label, lungs, size);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                if (lung_mask.at(y, x) == 0.0) continue;
                double contrib = 0.0;
                for (const auto& b : blobs) {
                    const double dy = static_cast<double>(y) - b.cy, dx = static_cast<double>(x) - b.cx;
                    const double d2 = dy * dy + dx * dx;
                    const double sigma = b.radius * kSigmaPerRadius;
                    contrib = std::max(contrib, b.amplitude * std::exp(-d2 / (2.0 * sigma * sigma)));
                    if (d2 <= b.radius * b.radius) smp.lesion_mask.at(y, x) = 1.0;
                }
                img.at(y, x) += contrib;
            }
        for (auto& v : img.data()) v = std::clamp(v, 0.0, 1.0);
        out.push_back(std::move(smp));
    }
    return out;
}

int patients_for_class(const DatasetSpec& spec, int label) {
    return static_cast<int>(std::lround(spec.patients_per_class * spec.class_ratio.at(static_cast<std::size_t>(label))));
}

std::vector<PhantomSample> generate_samples(const DatasetSpec& spec) {
    std::vector<std::pair<int, Label>> patients;
    int next = 0;
    for (int c = 0; c < kPhantomClasses; ++c)
        for (int p = 0; p < patients_for_class(spec, c); ++p) patients.emplace_back(next++, static_cast<Label>(c));

    std::vector<std::vector<PhantomSample>> per_patient(patients.size());
    std::vector<std::string> errors(patients.size());
#pragma omp parallel for schedule(dynamic) if (workers() > 1)
    for (std::size_t i = 0; i < patients.size(); ++i) {
        try {
            Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(patients[i].first)));
            per_patient[i] =
                generate_patient(patients[i].first, patients[i].second, spec.slices_per_patient, spec.size, rng);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw GenerationError(e);
    std::vector<PhantomSample> all;
    for (auto& v : per_patient)
        for (auto& s : v) all.push_back(std::move(s));
    return all;
}

std::vector<int> DatasetIndex::patients() const {
    std::set<int> ids;
    for (const auto& r : records) ids.insert(r.patient_id);
    return {ids.begin(), ids.end()};
}

DatasetIndex generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (!ec) fs::create_directories(out_dir / "masks", ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    const auto samples = generate_samples(spec);
    DatasetIndex index;
    index.root = out_dir;
    index.class_counts.assign(kPhantomClasses, 0);
    for (const auto& s : samples) {
        DatasetRecord r{sample_name("images", s.patient_id, s.slice_index),
                        sample_name("masks", s.patient_id, s.slice_index), static_cast<int>(s.label), s.patient_id,
                        s.slice_index};
        save_tensor(s.image, out_dir / r.image_path);
        save_tensor(s.lesion_mask, out_dir / r.mask_path);
        index.class_counts[static_cast<std::size_t>(r.label)]++;
        index.records.push_back(std::move(r));
    }
    write_index(index, out_dir / kIndexFileName);
    return index;
}

std::string format_index(const DatasetIndex& index) {
    std::ostringstream os;
    os << "wsds v1\n";
    for (const auto& r : index.records)
        os << r.image_path << '\t' << r.mask_path << '\t' << r.label << '\t' << r.patient_id << '\t' << r.slice_index
           << '\n';
    return os.str();
}

void write_index(const DatasetIndex& index, const std::filesystem::path& file) {
    const std::string text = format_index(index);
    write_file_bytes(file, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

DatasetIndex read_index(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open index " + file.string());
    std::string line;
    if (!std::getline(in, line) || line != "wsds v1") throw FormatError("index: missing 'wsds v1' header", 0);
    DatasetIndex index;
    index.root = file.parent_path();
    int max_label = -1;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        DatasetRecord r;
        std::string label, patient, slice;
        if (!std::getline(ls, r.image_path, '\t') || !std::getline(ls, r.mask_path, '\t') ||
            !std::getline(ls, label, '\t') || !std::getline(ls, patient, '\t') || !std::getline(ls, slice))
            throw FormatError("index: line " + std::to_string(lineno) + " needs 5 tab-separated fields", lineno);
        try {
            r.label = std::stoi(label);
            r.patient_id = std::stoi(patient);
            r.slice_index = std::stoi(slice);
        } catch (const std::exception&) {
            throw FormatError("index: line " + std::to_string(lineno) + " has a non-integer field", lineno);
        }
        if (r.label < 0) throw FormatError("index: negative label on line " + std::to_string(lineno), lineno);
        max_label = std::max(max_label, r.label);
        index.records.push_back(std::move(r));
    }
    index.class_counts.assign(static_cast<std::size_t>(std::max(max_label + 1, kPhantomClasses)), 0);
    for (const auto& r : index.records) index.class_counts[static_cast<std::size_t>(r.label)]++;
    return index;
}

std::vector<FoldSplit> kfold_split(const DatasetIndex& index, int k, std::uint64_t seed) {
    if (k < 2) throw ContractError("kfold_split: k must be >= 2");
    std::map<int, std::set<int>> by_class;
    for (const auto& r : index.records) by_class[r.label].insert(r.patient_id);
    std::map<int, int> patient_label;
    for (const auto& r : index.records) {
        auto [it, inserted] = patient_label.emplace(r.patient_id, r.label);
        if (!inserted && it->second != r.label)
            throw ContractError("kfold_split: patient " + std::to_string(r.patient_id) + " has mixed labels");
    }

    std::vector<std::vector<int>> groups(static_cast<std::size_t>(k));
    Rng rng(seed);
    for (auto& [label, ids] : by_class) {
        if (static_cast<int>(ids.size()) < k)
            throw ContractError("kfold_split: class " + std::to_string(label) + " has " + std::to_string(ids.size()) +
                                " patients, need at least k=" + std::to_string(k));
        std::vector<int> order(ids.begin(), ids.end());
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i = 0; i < order.size(); ++i) groups[i % static_cast<std::size_t>(k)].push_back(order[i]);
    }

    std::vector<FoldSplit> folds;
    for (int f = 0; f < k; ++f) {
        FoldSplit s;
        s.fold_index = f;
        for (int g = 0; g < k; ++g) {
            auto& dst = g == f ? s.test : g == (f + 1) % k ? s.val : s.train;
            dst.insert(dst.end(), groups[static_cast<std::size_t>(g)].begin(), groups[static_cast<std::size_t>(g)].end());
        }
        for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
        folds.push_back(std::move(s));
    }
    return folds;
}

void check_split(const FoldSplit& split, const std::vector<int>& patients) {
    std::set<int> seen;
    for (const auto* v : {&split.train, &split.val, &split.test})
        for (int p : *v)
            if (!seen.insert(p).second)
                throw ContractError("fold " + std::to_string(split.fold_index) + ": patient " + std::to_string(p) +
                                    " assigned twice");
    if (seen != std::set<int>(patients.begin(), patients.end()))
        throw ContractError("fold " + std::to_string(split.fold_index) + " does not cover every patient");
}

std::size_t count_components(const Tensor& mask) {
    require_rank(mask, 2, "count_components");
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    std::vector<char> seen(mask.size(), 0);
    std::vector<std::size_t> stack;
    std::size_t count = 0;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (mask[start] == 0.0 || seen[start]) continue;
        ++count;
        seen[start] = 1;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const auto r = static_cast<std::ptrdiff_t>(p / w), c = static_cast<std::ptrdiff_t>(p % w);
            for (std::ptrdiff_t dr = -1; dr <= 1; ++dr)
                for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
                    const auto rr = r + dr, cc = c + dc;
                    if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) || cc >= static_cast<std::ptrdiff_t>(w))
                        continue;
                    const auto q = static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
                    if (mask[q] != 0.0 && !seen[q]) {
                        seen[q] = 1;
                        stack.push_back(q);
                    }
                }
        }
    }
    return count;
}

} // namespace wsl
