#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mpfedkd/data.hpp"
#include "mpfedkd/error.hpp"

using namespace mpfedkd;
using namespace mpfedkd::data;
namespace fs = std::filesystem;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::vector<std::uint8_t> idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols) {
    std::vector<std::uint8_t> out;
    put_u32(out, 0x803);
    put_u32(out, count);
    put_u32(out, rows);
    put_u32(out, cols);
    for (std::uint32_t i = 0; i < count * rows * cols; ++i) out.push_back(static_cast<std::uint8_t>(i * 37 % 256));
    return out;
}

std::vector<std::uint8_t> idx_labels(std::uint32_t count) {
    std::vector<std::uint8_t> out;
    put_u32(out, 0x801);
    put_u32(out, count);
    for (std::uint32_t i = 0; i < count; ++i) out.push_back(static_cast<std::uint8_t>(i % 4));
    return out;
}

fs::path write_temp(const std::string& name, const std::vector<std::uint8_t>& bytes) {
    auto p = fs::temp_directory_path() / ("mpfedkd_" + name);
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                             static_cast<std::streamsize>(bytes.size()));
    return p;
}

DataError::Kind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const DataError& e) {
        return e.kind();
    }
    FAIL("expected a DataError");
    return DataError::Kind::io;
}

// Multinomial logistic regression by full-batch gradient descent.
double linear_probe_accuracy(const Dataset& ds) {
    const auto n = ds.size(), d = ds.input_dim(), C = ds.num_classes;
    std::vector<double> W((d + 1) * C, 0.0);
    for (int it = 0; it < 2000; ++it) {
        std::vector<double> grad(W.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> z(C, 0.0);
            for (std::size_t c = 0; c < C; ++c) {
                z[c] = W[d * C + c];
                for (std::size_t k = 0; k < d; ++k) z[c] += ds.features.at(i, k) * W[k * C + c];
            }
            const double mx = *std::max_element(z.begin(), z.end());
            double s = 0.0;
            for (auto& v : z) s += v = std::exp(v - mx);
            for (std::size_t c = 0; c < C; ++c) {
                const double g = z[c] / s - (ds.labels[i] == static_cast<int>(c) ? 1.0 : 0.0);
                for (std::size_t k = 0; k < d; ++k) grad[k * C + c] += g * ds.features.at(i, k);
                grad[d * C + c] += g;
            }
        }
        for (std::size_t j = 0; j < W.size(); ++j) W[j] -= 0.5 * grad[j] / static_cast<double>(n);
    }
    std::size_t hit = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double best_z = -1e300;
        for (std::size_t c = 0; c < C; ++c) {
            double z = W[d * C + c];
            for (std::size_t k = 0; k < d; ++k) z += ds.features.at(i, k) * W[k * C + c];
            if (z > best_z) {
                best_z = z;
                best = c;
            }
        }
        hit += ds.labels[i] == static_cast<int>(best);
    }
    return static_cast<double>(hit) / static_cast<double>(n);
}

std::vector<std::size_t> sorted_pool(const PartitionPlan& plan) {
    std::vector<std::size_t> all;
    for (const auto& s : plan.shards) {
        all.insert(all.end(), s.train.begin(), s.train.end());
        all.insert(all.end(), s.test.begin(), s.test.end());
    }
    std::sort(all.begin(), all.end());
    return all;
}

std::vector<std::size_t> iota_vec(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

}  // namespace

TEST_SUITE("data") {
    TEST_CASE("IDX parsing from bytes and files") {
        auto imgs = parse_idx_images(idx_images(5, 3, 2));
        CHECK(imgs.count == 5);
        CHECK(imgs.rows == 3);
        CHECK(imgs.cols == 2);
        CHECK(imgs.pixels.size() == 30);
        CHECK(parse_idx_labels(idx_labels(5)).size() == 5);

        auto ip = write_temp("imgs.idx", idx_images(6, 2, 2));
        auto lp = write_temp("labels.idx", idx_labels(6));
        auto ds = load_idx(ip, lp);
        CHECK(ds.size() == 6);
        CHECK(ds.input_dim() == 4);
        CHECK(ds.num_classes == 4);
        CHECK(ds.features.at(0, 1) == doctest::Approx(37.0 / 255.0));
        for (double v : ds.features.data()) CHECK((v >= 0.0 && v <= 1.0));
        CHECK(load_idx(ip, lp, 3).size() == 3);
        CHECK(load_idx(ip, lp, 0, 1).domains == std::vector<int>(6, 1));
    }

    TEST_CASE("IDX error kinds") {
        using K = DataError::Kind;
        auto empty = write_temp("empty.idx", {});
        auto lp = write_temp("labels5.idx", idx_labels(5));
        auto ip = write_temp("imgs4.idx", idx_images(4, 2, 2));
        CHECK(kind_of([&] { load_idx(empty, lp); }) == K::truncated);
        CHECK(kind_of([&] { load_idx(ip, lp); }) == K::count_mismatch);
        CHECK(kind_of([&] { load_idx("/nonexistent/mpfedkd.idx", lp); }) == K::io);
        auto bad = idx_images(2, 2, 2);
        bad[3] = 0x01;
        CHECK(kind_of([&] { parse_idx_images(bad); }) == K::bad_magic);
        auto cut = idx_images(2, 2, 2);
        cut.pop_back();
        CHECK(kind_of([&] { parse_idx_images(cut); }) == K::truncated);
        CHECK(kind_of([&] { parse_idx_labels(idx_images(1, 1, 1)); }) == K::bad_magic);
    }

    TEST_CASE("official MNIST training files" * doctest::skip(std::getenv("MNIST_DIR") == nullptr)) {
        const fs::path dir = std::getenv("MNIST_DIR");
        auto ds = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
        CHECK(ds.size() == 60000);
        CHECK(ds.num_classes == 10);
        CHECK(ds.input_dim() == 784);
    }

    TEST_CASE("blob generator") {
        auto flat = synth_blobs(2, 10, 3, 0.0, 1);
        for (std::size_t i = 0; i < flat.size(); ++i)
            for (std::size_t j = 0; j < flat.size(); ++j)
                if (flat.labels[i] == flat.labels[j])
                    for (std::size_t k = 0; k < 3; ++k) CHECK(flat.features.at(i, k) == flat.features.at(j, k));

        CHECK(synth_blobs(3, 20, 2, 0.5, 4).features == synth_blobs(3, 20, 2, 0.5, 4).features);
        CHECK(synth_blobs(3, 20, 2, 0.5, 4).labels == synth_blobs(3, 20, 2, 0.5, 4).labels);
        CHECK_FALSE(synth_blobs(3, 20, 2, 0.5, 4).features == synth_blobs(3, 20, 2, 0.5, 5).features);

        auto ds = synth_blobs(3, 34, 2, 0.1, 7);
        CHECK(ds.num_classes == 3);
        CHECK(linear_probe_accuracy(ds) >= 0.99);

        auto centers = blob_centers(3, 2, 7);
        for (const auto& c : centers) CHECK(std::hypot(c[0], c[1]) == doctest::Approx(1.0));
    }

    TEST_CASE("single client holds the whole pool") {
        auto ds = synth_blobs(3, 30, 2, 0.5, 1);
        PartitionOptions opt;
        opt.clients = 1;
        opt.alpha = 0.3;
        opt.seed = 5;
        auto plan = partition_dirichlet(ds, opt);
        REQUIRE(plan.shards.size() == 1);
        CHECK(sorted_pool(plan) == iota_vec(ds.size()));
        opt.test_fraction = 0.0;
        CHECK(partition_dirichlet(ds, opt).shards[0].train == iota_vec(ds.size()));
    }

    TEST_CASE("huge alpha gives near-uniform class histograms") {
        auto ds = synth_blobs(3, 200, 2, 0.5, 1);
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            PartitionOptions opt;
            opt.clients = 4;
            opt.alpha = 1e6;
            opt.seed = seed;
            for (const auto& s : partition_dirichlet(ds, opt).shards) {
                std::size_t total = 0;
                for (auto h : s.class_histogram) total += h;
                for (auto h : s.class_histogram) {
                    const double frac = static_cast<double>(h) / static_cast<double>(total);
                    CHECK(std::abs(frac - 1.0 / 3.0) / (1.0 / 3.0) < 0.10);
                }
            }
        }
    }

    TEST_CASE("small alpha concentrates classes") {
        auto ds = synth_blobs(10, 60, 2, 0.5, 1);
        int concentrated = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            PartitionOptions opt;
            opt.clients = 10;
            opt.alpha = 0.3;
            opt.seed = seed;
            bool any = false;
            for (const auto& s : partition_dirichlet(ds, opt).shards) {
                std::size_t total = 0, top = 0;
                for (auto h : s.class_histogram) {
                    total += h;
                    top = std::max(top, h);
                }
                any = any || 2 * top > total;
            }
            concentrated += any;
        }
        CHECK(concentrated > 10);
    }

    TEST_CASE("shards cover the pool exactly once and are reproducible") {
        auto ds = synth_blobs(4, 50, 3, 0.5, 2);
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            PartitionOptions opt;
            opt.clients = 5;
            opt.alpha = 0.5;
            opt.seed = seed;
            auto plan = partition_dirichlet(ds, opt);
            CHECK(sorted_pool(plan) == iota_vec(ds.size()));
            CHECK(plan.to_json() == partition_dirichlet(ds, opt).to_json());
            for (const auto& s : plan.shards) {
                CHECK_FALSE(s.train.empty());
                std::vector<std::size_t> hist(4, 0);
                for (auto i : s.train) ++hist[static_cast<std::size_t>(ds.labels[i])];
                CHECK(hist == s.class_histogram);
            }
            opt.test_fraction = 0.0;
            auto train_only = partition_dirichlet(ds, opt);
            std::vector<std::size_t> all;
            for (const auto& s : train_only.shards) all.insert(all.end(), s.train.begin(), s.train.end());
            std::sort(all.begin(), all.end());
            CHECK(all == iota_vec(ds.size()));
        }
    }

    TEST_CASE("test split is stratified per client class") {
        auto ds = synth_blobs(3, 100, 2, 0.5, 3);
        PartitionOptions opt;
        opt.clients = 3;
        opt.alpha = 1.0;
        opt.seed = 1;
        for (const auto& s : partition_dirichlet(ds, opt).shards) {
            std::vector<std::size_t> tr(3, 0), te(3, 0);
            for (auto i : s.train) ++tr[static_cast<std::size_t>(ds.labels[i])];
            for (auto i : s.test) ++te[static_cast<std::size_t>(ds.labels[i])];
            for (std::size_t c = 0; c < 3; ++c)
                CHECK(te[c] == static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(tr[c] + te[c]))));
        }
    }

    TEST_CASE("distinct-domain plans keep each shard in one domain") {
        auto ds = concat_domains(synth_blobs(3, 60, 2, 0.5, 1, 1.0, 0), synth_blobs(3, 60, 2, 0.5, 2, 1.0, 1));
        CHECK(ds.num_classes == 3);
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            PartitionOptions opt;
            opt.clients = 5;
            opt.alpha = 0.5;
            opt.seed = seed;
            opt.heterogeneity = Heterogeneity::distinct_domain;
            auto plan = partition_dirichlet(ds, opt);
            std::size_t in_first = 0;
            for (const auto& s : plan.shards) {
                REQUIRE(s.domain.has_value());
                in_first += *s.domain == 0;
                std::set<int> doms;
                for (auto i : s.train) doms.insert(ds.domains[i]);
                for (auto i : s.test) doms.insert(ds.domains[i]);
                CHECK(doms == std::set<int>{*s.domain});
            }
            CHECK(in_first == 3);
            CHECK(sorted_pool(plan) == iota_vec(ds.size()));
        }
        PartitionOptions one_domain;
        one_domain.clients = 4;
        one_domain.heterogeneity = Heterogeneity::distinct_domain;
        CHECK(kind_of([&] { partition_dirichlet(synth_blobs(3, 20, 2, 0.5, 1), one_domain); }) ==
              DataError::Kind::invalid_argument);
    }

    TEST_CASE("partition failures and bad arguments") {
        auto tiny = synth_blobs(2, 2, 2, 0.5, 1);
        PartitionOptions opt;
        opt.clients = 10;
        opt.alpha = 0.5;
        CHECK(kind_of([&] { partition_dirichlet(tiny, opt); }) == DataError::Kind::partition_failed);
        opt.clients = 0;
        CHECK(kind_of([&] { partition_dirichlet(tiny, opt); }) == DataError::Kind::invalid_argument);
        opt.clients = 2;
        opt.alpha = 0.0;
        CHECK(kind_of([&] { partition_dirichlet(tiny, opt); }) == DataError::Kind::invalid_argument);
        CHECK(parse_heterogeneity("type2") == Heterogeneity::distinct_domain);
        CHECK_THROWS(parse_heterogeneity("type3"));
    }

    TEST_CASE("zero-sample clients trigger a resample") {
        auto ds = synth_blobs(3, 10, 2, 0.5, 1);
        bool retried = false;
        for (std::uint64_t seed = 0; seed < 50 && !retried; ++seed) {
            PartitionOptions opt;
            opt.clients = 6;
            opt.alpha = 0.2;
            opt.seed = seed;
            try {
                retried = partition_dirichlet(ds, opt).attempts > 1;
            } catch (const DataError&) {
            }
        }
        CHECK(retried);
    }
}
