#include "wsl/localization.hpp"

#include "wsl/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace wsl {

void LocalizationConfig::validate() const {
    if (!(blur_sigma > 0.0)) throw ContractError("localization: blur_sigma must be positive");
    if (!(min_area_frac > 0.0 && min_area_frac < 1.0)) throw ContractError("localization: min_area_frac must be in (0,1)");
}

std::vector<double> gaussian_taps5(double sigma) {
    std::vector<double> k(5);
    double total = 0.0;
    for (int i = -2; i <= 2; ++i) total += k[static_cast<std::size_t>(i + 2)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    for (auto& v : k) v /= total;
    return k;
}

namespace {

std::size_t reflect101(std::ptrdiff_t i, std::size_t n) {
    const auto sn = static_cast<std::ptrdiff_t>(n);
    if (i < 0) i = -i;
    if (i >= sn) i = 2 * (sn - 1) - i;
    return static_cast<std::size_t>(i);
}

} // namespace

Tensor gaussian_blur5(const Tensor& map, double sigma) {
    require_rank(map, 2, "gaussian_blur5");
    const std::size_t h = map.dim(0), w = map.dim(1);
    if (h < 5 || w < 5) throw ShapeError("gaussian_blur5: map must be at least 5x5");
    const auto k = gaussian_taps5(sigma);
    Tensor tmp({h, w}), out({h, w});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int d = -2; d <= 2; ++d)
                acc += k[static_cast<std::size_t>(d + 2)] * map.at(r, reflect101(static_cast<std::ptrdiff_t>(c) + d, w));
            tmp.at(r, c) = acc;
        }
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int d = -2; d <= 2; ++d)
                acc += k[static_cast<std::size_t>(d + 2)] * tmp.at(reflect101(static_cast<std::ptrdiff_t>(r) + d, h), c);
            out.at(r, c) = acc;
        }
    return out;
}

double isodata_threshold(const Tensor& map) {
    if (map.empty()) throw DegenerateThreshold("isodata: empty map");
    const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
    if (*lo == *hi) throw DegenerateThreshold("isodata: constant map has no threshold");
    double t = 0.0;
    for (double v : map.data()) t += v;
    t /= static_cast<double>(map.size());
    for (int it = 0; it < 500; ++it) {
        double s_lo = 0.0, s_hi = 0.0;
        std::size_t n_lo = 0, n_hi = 0;
        for (double v : map.data()) {
            if (v <= t) {
                s_lo += v;
                ++n_lo;
            } else {
                s_hi += v;
                ++n_hi;
            }
        }
        const double next = (s_lo / static_cast<double>(n_lo) + s_hi / static_cast<double>(n_hi)) / 2.0;
        const bool done = std::fabs(next - t) < 1e-9;
        t = next;
        if (done) break;
    }
    return t;
}

namespace {

Tensor morph3(const Tensor& mask, bool dilate) {
    require_rank(mask, 2, "morphology");
    const auto h = static_cast<std::ptrdiff_t>(mask.dim(0)), w = static_cast<std::ptrdiff_t>(mask.dim(1));
    Tensor out(mask.dims());
    for (std::ptrdiff_t r = 0; r < h; ++r)
        for (std::ptrdiff_t c = 0; c < w; ++c) {
            bool any = false, all = true;
            for (std::ptrdiff_t dr = -1; dr <= 1; ++dr)
                for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
                    const auto rr = r + dr, cc = c + dc;
                    const bool on = rr >= 0 && cc >= 0 && rr < h && cc < w &&
                                    mask[static_cast<std::size_t>(rr * w + cc)] != 0.0;
                    any = any || on;
                    all = all && on;
                }
            out[static_cast<std::size_t>(r * w + c)] = (dilate ? any : all) ? 1.0 : 0.0;
        }
    return out;
}

} // namespace

Tensor dilate3(const Tensor& mask) { return morph3(mask, true); }
Tensor erode3(const Tensor& mask) { return morph3(mask, false); }
Tensor morph_close(const Tensor& mask) { return erode3(dilate3(mask)); }

Components connected_components(const Tensor& mask) {
    require_rank(mask, 2, "connected_components");
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    Components cc;
    cc.labels.assign(mask.size(), 0);
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (mask[start] == 0.0 || cc.labels[start] != 0) continue;
        const std::size_t label = cc.areas.size() + 1;
        std::size_t area = 0;
        cc.labels[start] = label;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            ++area;
            const std::size_t r = p / w, c = p % w;
            for (std::size_t rr = r == 0 ? 0 : r - 1; rr <= std::min(r + 1, h - 1); ++rr)
                for (std::size_t c2 = c == 0 ? 0 : c - 1; c2 <= std::min(c + 1, w - 1); ++c2) {
                    const std::size_t q = rr * w + c2;
                    if (mask[q] != 0.0 && cc.labels[q] == 0) {
                        cc.labels[q] = label;
                        stack.push_back(q);
                    }
                }
        }
        cc.areas.push_back(area);
    }
    return cc;
}

namespace {

std::vector<BoundingBox> boxes_of(const Components& cc, std::size_t w) {
    std::vector<BoundingBox> boxes(cc.count());
    std::vector<bool> seen(cc.count(), false);
    for (std::size_t p = 0; p < cc.labels.size(); ++p) {
        const std::size_t l = cc.labels[p];
        if (l == 0) continue;
        const std::size_t r = p / w, c = p % w;
        BoundingBox& b = boxes[l - 1];
        if (!seen[l - 1]) {
            b = {r, c, r, c, cc.areas[l - 1], l};
            seen[l - 1] = true;
            continue;
        }
        b.row0 = std::min(b.row0, r);
        b.row1 = std::max(b.row1, r);
        b.col0 = std::min(b.col0, c);
        b.col1 = std::max(b.col1, c);
    }
    return boxes;
}

} // namespace

std::vector<BoundingBox> component_boxes(const Tensor& mask) {
    return boxes_of(connected_components(mask), mask.dim(1));
}

std::vector<BoundingBox> extract_boxes(const Tensor& saliency, const LocalizationConfig& cfg) {
    cfg.validate();
    require_rank(saliency, 2, "extract_boxes");
    if (!saliency.all_finite()) throw ContractError("extract_boxes: saliency has non-finite values");
    Tensor a(saliency.dims());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::fabs(saliency[i]);
    const Tensor blurred = gaussian_blur5(a, cfg.blur_sigma);
    double t = 0.0;
    try {
        t = isodata_threshold(blurred);
    } catch (const DegenerateThreshold&) {
        return {};
    }
    Tensor mask(blurred.dims());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = blurred[i] > t ? 1.0 : 0.0;
    const Components cc = connected_components(morph_close(mask));
    const double min_area = cfg.min_area_frac * static_cast<double>(saliency.size());
    std::vector<BoundingBox> boxes;
    for (const auto& b : boxes_of(cc, saliency.dim(1)))
        if (static_cast<double>(b.area_px) >= min_area) boxes.push_back(b);
    std::stable_sort(boxes.begin(), boxes.end(), [](const BoundingBox& x, const BoundingBox& y) {
        if (x.area_px != y.area_px) return x.area_px > y.area_px;
        if (x.row0 != y.row0) return x.row0 < y.row0;
        return x.col0 < y.col0;
    });
    return boxes;
}

std::string format_boxes(const std::vector<BoundingBox>& boxes, std::size_t h, std::size_t w) {
    std::ostringstream os;
    os << "wsbox v1 " << h << ' ' << w << '\n';
    for (const auto& b : boxes) os << b.row0 << ' ' << b.col0 << ' ' << b.row1 << ' ' << b.col1 << ' ' << b.area_px << '\n';
    return os.str();
}

void write_boxes(const std::vector<BoundingBox>& boxes, std::size_t h, std::size_t w, const std::filesystem::path& path) {
    const std::string text = format_boxes(boxes, h, w);
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<BoundingBox> read_boxes(const std::filesystem::path& path, std::size_t* h, std::size_t* w) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open box file " + path.string());
    std::string line, magic, version;
    std::size_t hh = 0, ww = 0;
    if (!std::getline(in, line)) throw FormatError("wsbox: empty file", 0);
    std::istringstream hs(line);
    if (!(hs >> magic >> version >> hh >> ww) || magic != "wsbox" || version != "v1")
        throw FormatError("wsbox: bad header '" + line + "'", 0);
    std::vector<BoundingBox> boxes;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        BoundingBox b;
        if (!(ls >> b.row0 >> b.col0 >> b.row1 >> b.col1 >> b.area_px) || b.row0 > b.row1 || b.col0 > b.col1 ||
            b.row1 >= hh || b.col1 >= ww)
            throw FormatError("wsbox: bad box on line " + std::to_string(lineno), lineno);
        b.component_id = boxes.size() + 1;
        boxes.push_back(b);
    }
    if (h) *h = hh;
    if (w) *w = ww;
    return boxes;
}

} // namespace wsl
