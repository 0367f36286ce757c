#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "embedder.hpp"
#include "error.hpp"
#include "ranked_list.hpp"

namespace rpl {

/// Inverted-file index over k-means cells with per-dimension 8-bit scalar
/// quantization of the stored vectors.
class IvfSq8Index {
public:
    static constexpr std::size_t kLloydIterations = 10;

    IvfSq8Index() = default;

    static IvfSq8Index build(std::span<const Vector> vectors, std::vector<std::string> ids, std::size_t nlist,
                             std::uint64_t seed = 0) {
        const std::size_t n = vectors.size();
        if (ids.size() != n) throw ConfigError("ivf_build: ids and vectors differ in length");
        if (nlist < 1) throw ConfigError("ivf_build: nlist must be >= 1");
        if (n < nlist) {
            throw ConfigError("ivf_build: need at least nlist=" + std::to_string(nlist) + " vectors, got " +
                              std::to_string(n));
        }
        IvfSq8Index idx;
        idx.dim_ = vectors[0].size();
        idx.nlist_ = nlist;
        idx.seed_ = seed;
        idx.ids_ = std::move(ids);
        for (const auto& v : vectors) {
            if (v.size() != idx.dim_) throw ConfigError("ivf_build: inconsistent vector dimension");
        }

        const std::size_t dim = idx.dim_;
        idx.centroids_.assign(nlist * dim, 0.0);
        for (std::size_t c = 0; c < nlist; ++c) {
            const auto& src = vectors[n * c / nlist];
            std::copy(src.begin(), src.end(), idx.centroids_.begin() + static_cast<std::ptrdiff_t>(c * dim));
        }
        // Embeddings are sparse; distances are evaluated as
        // |c|^2 + sum over nonzero d of ((x_d - c_d)^2 - c_d^2).
        std::vector<std::vector<std::size_t>> nz(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < dim; ++d) {
                if (vectors[i][d] != 0.0) nz[i].push_back(d);
            }
        }
        std::vector<std::size_t> assign(n, 0);
        for (std::size_t it = 0; it < kLloydIterations; ++it) {
            const auto norms = idx.centroid_norms();
            for (std::size_t i = 0; i < n; ++i) assign[i] = idx.nearest_centroid(vectors[i], nz[i], norms);
            std::vector<double> sums(nlist * dim, 0.0);
            std::vector<std::size_t> counts(nlist, 0);
            for (std::size_t i = 0; i < n; ++i) {
                ++counts[assign[i]];
                double* s = &sums[assign[i] * dim];
                for (auto d : nz[i]) s[d] += vectors[i][d];
            }
            for (std::size_t c = 0; c < nlist; ++c) {
                if (counts[c] == 0) continue;
                for (std::size_t d = 0; d < dim; ++d) {
                    idx.centroids_[c * dim + d] = sums[c * dim + d] / static_cast<double>(counts[c]);
                }
            }
        }
        idx.lists_.assign(nlist, {});
        const auto norms = idx.centroid_norms();
        for (std::size_t i = 0; i < n; ++i) idx.lists_[idx.nearest_centroid(vectors[i], nz[i], norms)].push_back(i);

        idx.vmin_.assign(dim, 0.0);
        idx.vmax_.assign(dim, 0.0);
        for (std::size_t d = 0; d < dim; ++d) {
            double lo = vectors[0][d];
            double hi = vectors[0][d];
            for (std::size_t i = 1; i < n; ++i) {
                lo = std::min(lo, vectors[i][d]);
                hi = std::max(hi, vectors[i][d]);
            }
            idx.vmin_[d] = lo;
            idx.vmax_[d] = hi;
        }
        idx.codes_.resize(n * dim);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < dim; ++d) idx.codes_[i * dim + d] = idx.quantize(d, vectors[i][d]);
        }
        idx.decode_all();
        return idx;
    }

    std::size_t size() const { return ids_.size(); }
    std::size_t dim() const { return dim_; }
    std::size_t nlist() const { return nlist_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<std::vector<std::size_t>>& inverted_lists() const { return lists_; }
    std::span<const double> centroid(std::size_t c) const { return {&centroids_[c * dim_], dim_}; }
    double min(std::size_t d) const { return vmin_[d]; }
    double max(std::size_t d) const { return vmax_[d]; }
    std::uint8_t code(std::size_t i, std::size_t d) const { return codes_[i * dim_ + d]; }

    std::uint8_t quantize(std::size_t d, double x) const {
        const double range = vmax_[d] - vmin_[d];
        if (range <= 0.0) return 0;
        const double q = std::round(255.0 * (x - vmin_[d]) / range);
        return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
    }

    double dequantize(std::size_t d, std::uint8_t code) const {
        return vmin_[d] + static_cast<double>(code) * (vmax_[d] - vmin_[d]) / 255.0;
    }

    /// Reconstruction of stored vector `i`.
    std::span<const double> decoded(std::size_t i) const { return {&decoded_[i * dim_], dim_}; }

    RankedList search(std::span<const double> query, std::size_t k, std::size_t nprobe) const {
        if (ids_.empty() || k == 0) return {};
        if (query.size() != dim_) throw ConfigError("ivf_search: query dimension mismatch");
        nprobe = std::clamp<std::size_t>(nprobe, 1, nlist_);
        std::vector<std::size_t> order(nlist_);
        std::iota(order.begin(), order.end(), 0);
        std::vector<double> cscore(nlist_);
        for (std::size_t c = 0; c < nlist_; ++c) cscore[c] = dot(query, centroid(c));
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return cscore[a] > cscore[b]; });
        std::vector<Hit> hits;
        for (std::size_t p = 0; p < nprobe; ++p) {
            for (auto i : lists_[order[p]]) hits.push_back({ids_[i], dot(query, decoded(i))});
        }
        return top_k(std::move(hits), k);
    }

    // Layout after the "RPLX" header: u32 kind (2), u64 seed, u64 dim,
    // u64 nlist, u64 n, n x str id, nlist*dim f64 centroids, dim f64 min,
    // dim f64 max, n*dim u8 codes, nlist x {u64 len, len x u64 vector index}.
    void save(const std::filesystem::path& path) const {
        io::Writer w;
        w.bytes("RPLX");
        w.u32(kFormatVersion);
        w.u32(kKind);
        w.u64(seed_);
        w.u64(dim_);
        w.u64(nlist_);
        w.u64(ids_.size());
        for (const auto& id : ids_) w.str(id);
        w.f64s(centroids_);
        w.f64s(vmin_);
        w.f64s(vmax_);
        for (auto c : codes_) w.u8(c);
        for (const auto& list : lists_) {
            w.u64(list.size());
            for (auto i : list) w.u64(i);
        }
        w.save(path);
    }

    static IvfSq8Index load(const std::filesystem::path& path) {
        auto r = io::Reader::open(path);
        r.header("RPLX", kFormatVersion);
        if (r.u32() != kKind) throw ParseError(path.string() + " is not an IVF-SQ8 index");
        IvfSq8Index idx;
        idx.seed_ = r.u64();
        idx.dim_ = r.u64();
        idx.nlist_ = r.u64();
        const auto n = r.u64();
        for (std::uint64_t i = 0; i < n; ++i) idx.ids_.push_back(r.str());
        idx.centroids_.resize(idx.nlist_ * idx.dim_);
        r.f64s(idx.centroids_);
        idx.vmin_.resize(idx.dim_);
        idx.vmax_.resize(idx.dim_);
        r.f64s(idx.vmin_);
        r.f64s(idx.vmax_);
        idx.codes_.resize(n * idx.dim_);
        for (auto& c : idx.codes_) c = r.u8();
        idx.lists_.resize(idx.nlist_);
        for (auto& list : idx.lists_) {
            const auto len = r.u64();
            for (std::uint64_t i = 0; i < len; ++i) {
                const auto v = r.u64();
                if (v >= n) throw ParseError("inverted list references vector " + std::to_string(v));
                list.push_back(v);
            }
        }
        if (!r.at_end()) throw ParseError("trailing bytes in " + path.string());
        idx.decode_all();
        return idx;
    }

    static constexpr std::uint32_t kFormatVersion = 1;
    static constexpr std::uint32_t kKind = 2;

private:
    std::vector<double> centroid_norms() const {
        std::vector<double> out(nlist_, 0.0);
        for (std::size_t c = 0; c < nlist_; ++c) {
            for (std::size_t d = 0; d < dim_; ++d) out[c] += centroids_[c * dim_ + d] * centroids_[c * dim_ + d];
        }
        return out;
    }

    /// Squared-L2 nearest centroid, ties to the lowest index.
    std::size_t nearest_centroid(std::span<const double> v, std::span<const std::size_t> nz,
                                 std::span<const double> norms) const {
        std::size_t best = 0;
        double best_d = 0.0;
        for (std::size_t c = 0; c < nlist_; ++c) {
            const double* cen = &centroids_[c * dim_];
            double s = norms[c];
            for (auto d : nz) {
                const double diff = v[d] - cen[d];
                s += diff * diff - cen[d] * cen[d];
            }
            if (c == 0 || s < best_d) {
                best = c;
                best_d = s;
            }
        }
        return best;
    }

    void decode_all() {
        decoded_.resize(codes_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            for (std::size_t d = 0; d < dim_; ++d) decoded_[i * dim_ + d] = dequantize(d, codes_[i * dim_ + d]);
        }
    }

    std::size_t dim_ = 0;
    std::size_t nlist_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<std::string> ids_;
    std::vector<double> centroids_;
    std::vector<double> vmin_;
    std::vector<double> vmax_;
    std::vector<std::uint8_t> codes_;
    std::vector<std::vector<std::size_t>> lists_;
    std::vector<double> decoded_;
};

inline IvfSq8Index ivf_build(std::span<const Vector> vectors, std::vector<std::string> ids, std::size_t nlist,
                             std::uint64_t seed = 0) {
    return IvfSq8Index::build(vectors, std::move(ids), nlist, seed);
}

inline RankedList ivf_search(const IvfSq8Index& index, std::span<const double> query, std::size_t k,
                             std::size_t nprobe) {
    return index.search(query, k, nprobe);
}

} // namespace rpl
