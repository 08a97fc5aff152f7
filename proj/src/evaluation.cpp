#include "wsl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace wsl {

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> mean_defined(const std::vector<std::optional<double>>& v) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& x : v)
        if (x) {
            s += *x;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
}

} // namespace

ClassRates rates_from(const ClassCounts& c) {
    return {ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn), ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn),
            ratio(c.tn, c.tn + c.fp)};
}

ConfusionReport confusion_metrics(const std::vector<int>& labels, const std::vector<int>& predictions, std::size_t k) {
    if (labels.size() != predictions.size()) throw ContractError("confusion_metrics: length mismatch");
    if (k < 2) throw ContractError("confusion_metrics: need K >= 2");
    ConfusionReport r;
    r.num_classes = k;
    r.total = labels.size();
    r.counts.assign(k, {});
    std::size_t diag = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i], p = predictions[i];
        if (y < 0 || p < 0 || static_cast<std::size_t>(y) >= k || static_cast<std::size_t>(p) >= k)
            throw ContractError("confusion_metrics: class id out of range");
        if (y == p) ++diag;
        for (std::size_t c = 0; c < k; ++c) {
            const bool is_y = static_cast<std::size_t>(y) == c, is_p = static_cast<std::size_t>(p) == c;
            ClassCounts& cc = r.counts[c];
            if (is_y && is_p) ++cc.tp;
            else if (is_p) ++cc.fp;
            else if (is_y) ++cc.fn;
            else ++cc.tn;
        }
    }
    std::vector<std::optional<double>> acc, prc, sen, spe;
    for (const auto& cc : r.counts) {
        r.rates.push_back(rates_from(cc));
        acc.push_back(r.rates.back().accuracy);
        prc.push_back(r.rates.back().precision);
        sen.push_back(r.rates.back().sensitivity);
        spe.push_back(r.rates.back().specificity);
    }
    r.macro = {mean_defined(acc), mean_defined(prc), mean_defined(sen), mean_defined(spe)};
    r.overall_accuracy = r.total == 0 ? 0.0 : static_cast<double>(diag) / static_cast<double>(r.total);
    return r;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ContractError("roc_auc: length mismatch");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // twice the Mann-Whitney count: 2 per ordered pair, 1 per tie
    unsigned long long twice = 0, neg_below = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        unsigned long long gp = 0, gn = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]] != 0 && labels[order[j]] != 1) throw ContractError("roc_auc: labels must be 0 or 1");
            (labels[order[j]] == 1 ? gp : gn)++;
            ++j;
        }
        twice += gp * (2 * neg_below + gn);
        neg_below += gn;
        pos += gp;
        neg += gn;
        i = j;
    }
    if (pos == 0 || neg == 0) throw ContractError("roc_auc: need at least one positive and one negative");
    return static_cast<double>(twice) / static_cast<double>(2 * pos * neg);
}

Interval confidence_interval(const std::vector<double>& values, bool clip) {
    if (values.empty()) throw ContractError("confidence_interval: no values");
    Interval iv;
    for (double v : values) iv.mean += v;
    iv.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - iv.mean) * (v - iv.mean);
        iv.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    const double half = 1.96 * iv.sd / std::sqrt(static_cast<double>(values.size()));
    iv.lo = iv.mean - half;
    iv.hi = iv.mean + half;
    if (clip) {
        iv.lo = std::clamp(iv.lo, 0.0, 1.0);
        iv.hi = std::clamp(iv.hi, 0.0, 1.0);
    }
    return iv;
}

namespace {

void finish_row(MetricRow& row) {
    for (const auto& vals : row.per_fold)
        row.summary.push_back(vals.empty() ? std::nullopt : std::optional<Interval>(confidence_interval(vals)));
}

std::optional<double> class_auc(const FoldOutcome& f, std::size_t c) {
    std::vector<double> s;
    std::vector<int> y;
    std::size_t p = 0;
    for (std::size_t i = 0; i < f.labels.size(); ++i) {
        s.push_back(f.probabilities.at(i).at(c));
        y.push_back(static_cast<std::size_t>(f.labels[i]) == c ? 1 : 0);
        p += static_cast<std::size_t>(y.back());
    }
    if (p == 0 || p == y.size()) return std::nullopt;
    return roc_auc(s, y);
}

} // namespace

MetricReport crossval_report(const std::vector<FoldOutcome>& folds, const std::vector<std::string>& class_names) {
    if (folds.size() < 2) throw ContractError("crossval_report: need at least 2 folds");
    const std::size_t k = class_names.size();
    MetricReport rep;
    rep.folds = folds.size();
    rep.class_names = class_names;
    rep.overall.name = "Overall";
    rep.overall.per_fold.assign(5, {});
    rep.classes.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        rep.classes[c].name = class_names[c];
        rep.classes[c].per_fold.assign(5, {});
    }
    auto push = [](std::vector<double>& dst, const std::optional<double>& v) {
        if (v) dst.push_back(*v);
    };
    for (const auto& f : folds) {
        const ConfusionReport cm = confusion_metrics(f.labels, f.predictions, k);
        std::vector<std::optional<double>> aucs;
        for (std::size_t c = 0; c < k; ++c) {
            aucs.push_back(class_auc(f, c));
            auto& row = rep.classes[c].per_fold;
            push(row[0], cm.rates[c].accuracy);
            push(row[1], cm.rates[c].precision);
            push(row[2], cm.rates[c].sensitivity);
            push(row[3], cm.rates[c].specificity);
            push(row[4], aucs.back());
        }
        auto& row = rep.overall.per_fold;
        row[0].push_back(cm.overall_accuracy);
        push(row[1], cm.macro.precision);
        push(row[2], cm.macro.sensitivity);
        push(row[3], cm.macro.specificity);
        push(row[4], mean_defined(aucs));
    }
    finish_row(rep.overall);
    for (auto& r : rep.classes) finish_row(r);
    return rep;
}

std::string format_report(const MetricReport& report) {
    std::ostringstream os;
    os << "# " << report.folds << "-fold cross-validation, mean [95% CI]\n";
    auto emit = [&](const std::string& first, const std::vector<std::string>& cells) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%-10s", first.c_str());
        std::string line = buf;
        for (const auto& c : cells) {
            std::snprintf(buf, sizeof buf, " | %-20s", c.c_str());
            line += buf;
        }
        line.erase(line.find_last_not_of(' ') + 1);
        os << line << '\n';
    };
    emit("Class", std::vector<std::string>(std::begin(kMetricColumns), std::end(kMetricColumns)));
    auto row = [&](const MetricRow& r) {
        std::vector<std::string> cells;
        for (const auto& s : r.summary) {
            char buf[64];
            if (s) std::snprintf(buf, sizeof buf, "%.3f [%.3f, %.3f]", s->mean, s->lo, s->hi);
            else std::snprintf(buf, sizeof buf, "n/a");
            cells.emplace_back(buf);
        }
        emit(r.name, cells);
    };
    row(report.overall);
    for (const auto& r : report.classes) row(r);
    return os.str();
}

double box_iou(const BoundingBox& a, const BoundingBox& b) {
    auto area = [](const BoundingBox& x) { return (x.row1 - x.row0 + 1) * (x.col1 - x.col0 + 1); };
    const std::size_t r0 = std::max(a.row0, b.row0), r1 = std::min(a.row1, b.row1);
    const std::size_t c0 = std::max(a.col0, b.col0), c1 = std::min(a.col1, b.col1);
    const std::size_t inter = (r0 <= r1 && c0 <= c1) ? (r1 - r0 + 1) * (c1 - c0 + 1) : 0;
    return static_cast<double>(inter) / static_cast<double>(area(a) + area(b) - inter);
}

LocalizationScore localization_score(const std::vector<std::vector<BoundingBox>>& boxes,
                                     const std::vector<Tensor>& masks) {
    if (boxes.size() != masks.size()) throw ContractError("localization_score: boxes and masks differ in count");
    LocalizationScore s;
    double iou_sum = 0.0;
    for (std::size_t img = 0; img < masks.size(); ++img) {
        const Tensor& m = masks[img];
        require_rank(m, 2, "localization_score");
        const Components cc = connected_components(m);
        const auto lesions = component_boxes(m);
        const std::size_t w = m.dim(1);
        std::vector<double> cy(cc.count(), 0.0), cx(cc.count(), 0.0);
        for (std::size_t p = 0; p < cc.labels.size(); ++p)
            if (cc.labels[p]) {
                cy[cc.labels[p] - 1] += static_cast<double>(p / w);
                cx[cc.labels[p] - 1] += static_cast<double>(p % w);
            }
        const auto& bx = boxes[img];
        struct Pair {
            double iou;
            std::size_t lesion, box;
        };
        std::vector<Pair> pairs;
        for (std::size_t l = 0; l < lesions.size(); ++l) {
            const double area = static_cast<double>(cc.areas[l]);
            const double ly = cy[l] / area, lx = cx[l] / area;
            bool hit = false;
            for (std::size_t b = 0; b < bx.size(); ++b) {
                const double iou = box_iou(bx[b], lesions[l]);
                const bool contains = static_cast<double>(bx[b].row0) <= ly && ly <= static_cast<double>(bx[b].row1) &&
                                      static_cast<double>(bx[b].col0) <= lx && lx <= static_cast<double>(bx[b].col1);
                hit = hit || iou >= 0.3 || contains;
                if (iou > 0.0) pairs.push_back({iou, l, b});
            }
            s.hits += hit ? 1 : 0;
        }
        s.lesions += lesions.size();
        std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
        std::vector<bool> lesion_used(lesions.size(), false), box_used(bx.size(), false);
        for (const auto& p : pairs) {
            if (lesion_used[p.lesion] || box_used[p.box]) continue;
            lesion_used[p.lesion] = box_used[p.box] = true;
            iou_sum += p.iou;
            ++s.matched;
        }
    }
    s.hit_rate = s.lesions == 0 ? 0.0 : static_cast<double>(s.hits) / static_cast<double>(s.lesions);
    s.mean_iou = s.matched == 0 ? 0.0 : iou_sum / static_cast<double>(s.matched);
    return s;
}

} // namespace wsl
