// SPDX-License-Identifier: Apache-2.0
#pragma once

// Plain-loop transformer used as an oracle for the tape-based model. Shares
// nothing with the library beyond reading parameter values by name.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "histost/core/pretrain.hpp"
#include "histost/numerics/params.hpp"

namespace histost::testing {

using Mat = std::vector<std::vector<double>>;

inline Mat param_mat(const ad::ParamStore& s, const std::string& name) {
    const auto& t = s.get(name).value;
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.data()[i * t.cols() + j];
    return m;
}

inline std::vector<double> param_vec(const ad::ParamStore& s, const std::string& name) {
    const auto& d = s.get(name).value.data();
    return {d.begin(), d.end()};
}

inline Mat ref_matmul(const Mat& a, const Mat& b) {
    Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
}

inline Mat ref_affine(const Mat& x, const Mat& w, const std::vector<double>* b) {
    Mat y = ref_matmul(x, w);
    if (b)
        for (auto& r : y)
            for (std::size_t j = 0; j < r.size(); ++j) r[j] += (*b)[j];
    return y;
}

inline Mat ref_layer_norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b) {
    Mat y = x;
    for (auto& r : y) {
        double mu = 0, var = 0;
        for (double v : r) mu += v;
        mu /= static_cast<double>(r.size());
        for (double v : r) var += (v - mu) * (v - mu);
        var /= static_cast<double>(r.size());
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] = (r[j] - mu) * inv * g[j] + b[j];
    }
    return y;
}

inline double ref_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

/// One pre-norm block with a single feed-forward network named `ffn`.
/// `slopes` empty means no positional bias.
inline Mat ref_block(const ad::ParamStore& s, const std::string& p, const std::string& ffn, const Mat& h,
                     const std::vector<std::array<double, 2>>& coords, const std::vector<double>& slopes, std::size_t heads) {
    const std::size_t n = h.size(), D = h[0].size(), dh = D / heads;
    const auto bq = param_vec(s, p + ".attn.bq"), bv = param_vec(s, p + ".attn.bv"), bo = param_vec(s, p + ".attn.bo");
    Mat x = ref_layer_norm(h, param_vec(s, p + ".ln1.g"), param_vec(s, p + ".ln1.b"));
    Mat q = ref_affine(x, param_mat(s, p + ".attn.wq"), &bq);
    Mat k = ref_affine(x, param_mat(s, p + ".attn.wk"), nullptr);
    Mat v = ref_affine(x, param_mat(s, p + ".attn.wv"), &bv);
    Mat o(n, std::vector<double>(D, 0.0));
    for (std::size_t hd = 0; hd < heads; ++hd) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> logit(n);
            double mx = -1e300;
            for (std::size_t j = 0; j < n; ++j) {
                double dot = 0;
                for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) dot += q[i][c] * k[j][c];
                logit[j] = dot / std::sqrt(static_cast<double>(dh));
                if (!slopes.empty())
                    logit[j] -= slopes[hd] * std::hypot(coords[i][0] - coords[j][0], coords[i][1] - coords[j][1]);
                mx = std::max(mx, logit[j]);
            }
            double z = 0;
            for (auto& l : logit) z += (l = std::exp(l - mx));
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) o[i][c] += logit[j] / z * v[j][c];
        }
    }
    Mat a = ref_affine(o, param_mat(s, p + ".attn.wo"), &bo);
    Mat h1 = h;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < D; ++j) h1[i][j] += a[i][j];
    Mat x2 = ref_layer_norm(h1, param_vec(s, p + ".ln2.g"), param_vec(s, p + ".ln2.b"));
    const auto b1 = param_vec(s, p + "." + ffn + ".b1"), b2 = param_vec(s, p + "." + ffn + ".b2");
    Mat f = ref_affine(x2, param_mat(s, p + "." + ffn + ".w1"), &b1);
    for (auto& r : f)
        for (auto& val : r) val = ref_gelu(val);
    f = ref_affine(f, param_mat(s, p + "." + ffn + ".w2"), &b2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < D; ++j) h1[i][j] += f[i][j];
    return h1;
}

/// Reference forward of HE-only contexts: toy-mlp encoder, projection plus
/// modality vector, then plain blocks using the HE expert as the FFN.
inline Mat reference_he_only(const core::SpatialModel& m, const core::Batch& b, std::size_t context, const std::vector<double>& slopes) {
    const auto& s = m.params();
    const auto& ctx = b.contexts[context];
    Mat patches;
    for (std::size_t i = 0; i < ctx.size(); ++i) {
        auto r = b.spots.he.features.row(static_cast<std::size_t>(ctx.he_row[i]));
        patches.emplace_back(r.begin(), r.end());
    }
    const auto b1 = param_vec(s, "he_encoder.b1"), b2 = param_vec(s, "he_encoder.b2");
    Mat h = ref_affine(patches, param_mat(s, "he_encoder.w1"), &b1);
    for (auto& r : h)
        for (auto& v : r) v = ref_gelu(v);
    h = ref_affine(h, param_mat(s, "he_encoder.w2"), &b2);
    const auto pb = param_vec(s, "embed.proj_he.b");
    Mat x = ref_affine(h, param_mat(s, "embed.proj_he.w"), &pb);
    const auto mod = param_vec(s, "embed.mod_he");
    for (auto& r : x)
        for (std::size_t k = 0; k < r.size(); ++k) r[k] += mod[k];
    for (std::size_t l = 0; l < m.config().blocks; ++l)
        x = ref_block(s, "block" + std::to_string(l), "ffn_he", x, ctx.coords, slopes, m.config().heads);
    return x;
}

}  // namespace histost::testing
