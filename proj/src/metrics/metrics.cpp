#include "gtp/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gtp::metrics {

namespace {

void check_binary(const std::vector<double>& scores, const std::vector<int>& labels, const char* what) {
    if (scores.size() != labels.size()) throw std::invalid_argument(std::string(what) + ": scores and labels differ in length");
    for (int y : labels)
        if (y != 0 && y != 1) throw std::invalid_argument(std::string(what) + ": labels must be 0 or 1");
    for (double s : scores)
        if (!std::isfinite(s)) throw std::invalid_argument(std::string(what) + ": non-finite score");
}

std::vector<std::size_t> order_desc(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

double psi(double x, double y) { return x > y ? 1.0 : (x == y ? 0.5 : 0.0); }

} // namespace

ConfusionMetrics confusion_metrics(const std::vector<int>& labels, const std::vector<int>& predictions) {
    if (labels.empty()) throw std::invalid_argument("confusion_metrics: no samples");
    if (labels.size() != predictions.size()) throw std::invalid_argument("confusion_metrics: length mismatch");
    ConfusionMetrics m;
    m.total = labels.size();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= 3 || predictions[i] < 0 || predictions[i] >= 3) {
            throw std::invalid_argument("confusion_metrics: class ids must be 0, 1 or 2");
        }
        ++m.matrix[labels[i]][predictions[i]];
    }
    std::size_t correct = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        correct += m.matrix[c][c];
        std::size_t pred = 0, actual = 0;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            pred += m.matrix[k][c];
            actual += m.matrix[c][k];
        }
        const std::size_t tp = m.matrix[c][c], fp = pred - tp, fn = actual - tp, tn = m.total - tp - fp - fn;
        m.precision_undefined[c] = pred == 0;
        m.precision[c] = pred == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(pred);
        m.recall[c] = actual == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(actual);
        m.specificity[c] = tn + fp == 0 ? 0.0 : static_cast<double>(tn) / static_cast<double>(tn + fp);
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(m.total);
    return m;
}

RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_binary(scores, labels, "roc_auc");
    const std::size_t pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw std::invalid_argument("roc_auc needs at least one positive and one negative");

    const auto idx = order_desc(scores);
    RocCurve r;
    r.fpr.push_back(0.0);
    r.tpr.push_back(0.0);
    r.thresholds.push_back(std::numeric_limits<double>::infinity());
    // Mann-Whitney: each positive scores 1 per negative below it, ½ per tied negative.
    double u = 0.0;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i, tie_pos = 0, tie_neg = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) (labels[idx[j++]] == 1 ? tie_pos : tie_neg)++;
        u += static_cast<double>(tie_pos) * static_cast<double>(neg - fp - tie_neg) +
             0.5 * static_cast<double>(tie_pos) * static_cast<double>(tie_neg);
        tp += tie_pos;
        fp += tie_neg;
        r.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
        r.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
        r.thresholds.push_back(scores[idx[i]]);
        i = j;
    }
    r.auc = u / (static_cast<double>(pos) * static_cast<double>(neg));
    return r;
}

PrCurve pr_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_binary(scores, labels, "pr_curve");
    const std::size_t pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    if (pos == 0) throw std::invalid_argument("pr_curve needs at least one positive");
    const auto idx = order_desc(scores);
    PrCurve r;
    r.recall.push_back(0.0);
    r.precision.push_back(1.0);
    r.thresholds.push_back(std::numeric_limits<double>::infinity());
    std::size_t tp = 0, seen = 0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) tp += labels[idx[j++]] == 1;
        seen = j;
        const double rec = static_cast<double>(tp) / static_cast<double>(pos);
        const double prec = static_cast<double>(tp) / static_cast<double>(seen);
        r.average_precision += (rec - prev_recall) * prec;
        prev_recall = rec;
        r.recall.push_back(rec);
        r.precision.push_back(prec);
        r.thresholds.push_back(scores[idx[i]]);
        i = j;
    }
    return r;
}

double log10_two_sided_p(double z) {
    const double x = std::abs(z) / std::sqrt(2.0);
    const double p = std::erfc(x);
    if (p > 1e-300) return std::log10(p);
    // erfc(x) ~ e^{−x²}/(x√π)·(1 − 1/(2x²) + 3/(4x⁴))
    const double x2 = x * x;
    return (-x2 - std::log(x * std::sqrt(std::numbers::pi)) + std::log1p(-1.0 / (2 * x2) + 3.0 / (4 * x2 * x2))) / std::log(10.0);
}

DelongResult delong_test(const std::vector<double>& a, const std::vector<double>& b, const std::vector<int>& labels) {
    check_binary(a, labels, "delong_test");
    check_binary(b, labels, "delong_test");
    std::vector<std::size_t> P, N;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? P : N).push_back(i);
    if (P.size() < 2 || N.size() < 2) throw std::invalid_argument("delong_test needs at least two positives and two negatives");
    const double m = static_cast<double>(P.size()), n = static_cast<double>(N.size());

    const std::vector<const std::vector<double>*> s{&a, &b};
    std::vector<std::vector<double>> v10(2, std::vector<double>(P.size())), v01(2, std::vector<double>(N.size()));
    DelongResult out;
    for (std::size_t r = 0; r < 2; ++r) {
        const auto& x = *s[r];
        double auc = 0.0;
        for (std::size_t i = 0; i < P.size(); ++i)
            for (std::size_t j = 0; j < N.size(); ++j) {
                const double k = psi(x[P[i]], x[N[j]]);
                v10[r][i] += k / n;
                v01[r][j] += k / m;
                auc += k;
            }
        (r == 0 ? out.auc_a : out.auc_b) = auc / (m * n);
    }
    auto cov = [](const std::vector<double>& u, const std::vector<double>& w) {
        const double mu = std::accumulate(u.begin(), u.end(), 0.0) / static_cast<double>(u.size());
        const double mw = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
        double c = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) c += (u[i] - mu) * (w[i] - mw);
        return c / static_cast<double>(u.size() - 1);
    };
    const double var = (cov(v10[0], v10[0]) + cov(v10[1], v10[1]) - 2 * cov(v10[0], v10[1])) / m +
                       (cov(v01[0], v01[0]) + cov(v01[1], v01[1]) - 2 * cov(v01[0], v01[1])) / n;
    const double diff = out.auc_a - out.auc_b;
    if (!(var > 0.0)) {
        out.z = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
        out.log10_p = diff == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
        return out;
    }
    out.z = diff / std::sqrt(var);
    out.log10_p = log10_two_sided_p(out.z);
    return out;
}

int argmax(const std::array<double, kNumClasses>& p) {
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

MetricsReport evaluate(const std::vector<int>& labels, const std::vector<std::array<double, kNumClasses>>& probabilities) {
    if (labels.size() != probabilities.size()) throw std::invalid_argument("evaluate: labels and probabilities differ in length");
    std::vector<int> pred;
    for (const auto& p : probabilities) pred.push_back(argmax(p));
    MetricsReport r;
    r.confusion = confusion_metrics(labels, pred);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        std::vector<double> s;
        std::vector<int> y;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            s.push_back(probabilities[i][c]);
            y.push_back(labels[i] == static_cast<int>(c));
        }
        const auto pos = std::count(y.begin(), y.end(), 1);
        if (pos == 0 || pos == static_cast<long>(y.size())) {
            r.roc.emplace_back();
            r.roc.back().auc = std::numeric_limits<double>::quiet_NaN();
        } else {
            r.roc.push_back(roc_auc(s, y));
        }
        if (pos == 0) {
            r.pr.emplace_back();
            r.pr.back().average_precision = std::numeric_limits<double>::quiet_NaN();
        } else {
            r.pr.push_back(pr_curve(s, y));
        }
    }
    return r;
}

namespace {

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json numbers(const std::vector<double>& v) {
    nlohmann::json out = nlohmann::json::array();
    for (double x : v) out.push_back(number(x));
    return out;
}

} // namespace

nlohmann::json to_json(const ConfusionMetrics& c) {
    nlohmann::json j;
    j["matrix"] = c.matrix;
    j["precision"] = c.precision;
    j["precision_undefined"] = c.precision_undefined;
    j["recall"] = c.recall;
    j["specificity"] = c.specificity;
    j["accuracy"] = c.accuracy;
    j["total"] = c.total;
    return j;
}

nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["confusion"] = to_json(r.confusion);
    j["classes"] = nlohmann::json::array();
    for (std::size_t c = 0; c < r.roc.size(); ++c) {
        j["classes"].push_back({{"class", c},
                                {"auc", number(r.roc[c].auc)},
                                {"average_precision", number(r.pr[c].average_precision)},
                                {"roc", {{"fpr", numbers(r.roc[c].fpr)}, {"tpr", numbers(r.roc[c].tpr)}}},
                                {"pr", {{"recall", numbers(r.pr[c].recall)}, {"precision", numbers(r.pr[c].precision)}}}});
    }
    j["delong"] = nlohmann::json::array();
    for (std::size_t i = 0; i < r.comparisons.size(); ++i) {
        const auto& d = r.comparisons[i];
        j["delong"].push_back({{"name", r.comparisons_names.at(i)},
                               {"auc_a", d.auc_a},
                               {"auc_b", d.auc_b},
                               {"z", number(d.z)},
                               {"log10_p", number(d.log10_p)}});
    }
    return j;
}

std::string curves_csv(const MetricsReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << "class,curve,x,y,threshold\n";
    for (std::size_t c = 0; c < r.roc.size(); ++c) {
        for (std::size_t i = 0; i < r.roc[c].fpr.size(); ++i)
            os << c << ",roc," << r.roc[c].fpr[i] << ',' << r.roc[c].tpr[i] << ',' << r.roc[c].thresholds[i] << '\n';
        for (std::size_t i = 0; i < r.pr[c].recall.size(); ++i)
            os << c << ",pr," << r.pr[c].recall[i] << ',' << r.pr[c].precision[i] << ',' << r.pr[c].thresholds[i] << '\n';
    }
    return os.str();
}

MeanStd mean_std(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean_std of no values");
    MeanStd out;
    out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - out.mean) * (x - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return out;
}

nlohmann::json aggregate_folds(const std::vector<MetricsReport>& folds) {
    auto summarize = [&](auto get) {
        std::vector<double> v;
        for (const auto& f : folds) v.push_back(get(f));
        const MeanStd ms = mean_std(v);
        return nlohmann::json{{"mean", number(ms.mean)}, {"std", number(ms.std)}, {"folds", numbers(v)}};
    };
    nlohmann::json j;
    j["num_folds"] = folds.size();
    j["accuracy"] = summarize([](const MetricsReport& f) { return f.confusion.accuracy; });
    j["classes"] = nlohmann::json::array();
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        j["classes"].push_back(
            {{"class", c},
             {"precision", summarize([c](const MetricsReport& f) { return f.confusion.precision[c]; })},
             {"recall", summarize([c](const MetricsReport& f) { return f.confusion.recall[c]; })},
             {"specificity", summarize([c](const MetricsReport& f) { return f.confusion.specificity[c]; })},
             {"auc", summarize([c](const MetricsReport& f) { return f.roc.at(c).auc; })},
             {"average_precision", summarize([c](const MetricsReport& f) { return f.pr.at(c).average_precision; })}});
    }
    return j;
}

} // namespace gtp::metrics
