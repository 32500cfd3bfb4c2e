#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "motioncache/rng.hpp"
#include "motioncache/schedule.hpp"
#include "motioncache/shape.hpp"
#include "motioncache/tensor.hpp"

using namespace mc;

namespace {

Tensor constant_tensor(const ChunkShape& s, double x) { return Tensor(s, x); }

}  // namespace

TEST_CASE("token flatten/unflatten bijection") {
    const ChunkShape s{2, 3, 4, 1};

    CHECK(token_flatten({0, 0, 0}, s) == 0);
    CHECK(token_flatten({1, 2, 3}, s) == 23);

    for (std::int64_t p = 0; p < s.tokens(); ++p) {
        const TokenIndex idx = token_unflatten(p, s);
        CHECK(token_flatten(idx, s) == p);
    }

    CHECK_THROWS_AS(token_flatten({2, 0, 0}, s), InvalidArgument);
    CHECK_THROWS_AS(token_flatten({0, 3, 0}, s), InvalidArgument);
    CHECK_THROWS_AS(token_unflatten(-1, s), InvalidArgument);
    CHECK_THROWS_AS(token_unflatten(s.tokens(), s), InvalidArgument);
}

TEST_CASE("forward interpolation endpoints and midpoints") {
    const ChunkShape s{2, 3, 3, 2};
    const NoiseSchedule sched(4, 1);
    Tensor data = gaussian_tensor(s, 11);
    Tensor noise = gaussian_tensor(s, 22);

    SECTION("t = 0 gives data exactly") {
        const Tensor out = forward_interpolate(data, noise, 0, sched);
        CHECK(max_abs_diff(out, data) == 0.0);
    }
    SECTION("t = T gives noise exactly") {
        const Tensor out = forward_interpolate(data, noise, sched.total_steps, sched);
        CHECK(max_abs_diff(out, noise) == 0.0);
    }
    SECTION("sigma = 0.25 blends arithmetically") {
        const Tensor zero = constant_tensor(s, 0.0);
        const Tensor two = constant_tensor(s, 2.0);
        const Tensor out = forward_interpolate(zero, two, 1, sched);  // sigma = 1/4
        for (double x : out.v) CHECK(x == 0.5);
    }
    SECTION("equal endpoints are a fixed point at every t") {
        for (std::int64_t t = 0; t <= sched.total_steps; ++t) {
            const Tensor out = forward_interpolate(data, data, t, sched);
            CHECK(max_abs_diff(out, data) == 0.0);
        }
    }
    SECTION("shape mismatch rejected") {
        Tensor other(ChunkShape{1, 3, 3, 2});
        CHECK_THROWS_AS(forward_interpolate(data, other, 0, sched), InvalidArgument);
    }
}

TEST_CASE("euler step arithmetic") {
    const ChunkShape s{1, 1, 2, 1};

    Tensor x(s), v(s);
    x.v = {1.0, -1.0};
    v.v = {-1.0, 1.0};
    const Tensor out = euler_step(x, v, 1.0);
    CHECK(out.v[0] == 0.0);
    CHECK(out.v[1] == 0.0);

    Tensor x1(s, 1.0), v1(s, 2.0);
    const Tensor out1 = euler_step(x1, v1, 0.1);
    for (double e : out1.v) CHECK(e == Catch::Approx(1.2).margin(1e-15));

    const Tensor unchanged = euler_step(x1, Tensor(s, 0.0), 0.25);
    CHECK(max_abs_diff(unchanged, x1) == 0.0);

    Tensor bad(s, std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_AS(euler_step(bad, v1, 0.1), NumericError);
    CHECK_THROWS_AS(euler_step(x1, v1, std::numeric_limits<double>::infinity()), NumericError);
}

TEST_CASE("euler step round trip is reversible to fp round-off") {
    const ChunkShape s{2, 4, 4, 3};
    Rng rng(99);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor x = gaussian_tensor(s, rng.next_u64());
        Tensor v = gaussian_tensor(s, rng.next_u64());
        const double dt = rng.uniform(0.001, 0.5);
        const Tensor back = euler_step(euler_step(x, v, dt), v, -dt);
        double rel = 0.0;
        for (std::size_t i = 0; i < x.v.size(); ++i) {
            const double denom = std::max(1.0, std::abs(x.v[i]));
            rel = std::max(rel, std::abs(back.v[i] - x.v[i]) / denom);
        }
        CHECK(rel <= 1e-12);
    }
}

TEST_CASE("chunk windows") {
    SECTION("first chunk spans the whole schedule") {
        const auto w = chunk_window(1, 50, 5);
        CHECK(w.start == 0);
        CHECK(w.end == 50);
    }
    SECTION("second chunk clipped at the schedule end") {
        const auto raw = chunk_window_raw(2, 50, 5);
        CHECK(raw.start == 10);
        CHECK(raw.end == 60);
        const auto w = chunk_window(2, 50, 5);
        CHECK(w.start == 10);
        CHECK(w.end == 50);
    }
    SECTION("window size one is strictly sequential") {
        for (std::int64_t i = 1; i <= 4; ++i) {
            const auto w = chunk_window_raw(i, 50, 1);
            CHECK(w.start == (i - 1) * 50);
            CHECK(w.end == i * 50);
        }
    }
    SECTION("consecutive raw windows overlap by (l-1)*T/l") {
        const std::int64_t T = 60, l = 5;
        for (std::int64_t i = 1; i <= 6; ++i) {
            const auto a = chunk_window_raw(i, T, l);
            const auto b = chunk_window_raw(i + 1, T, l);
            CHECK(a.end - b.start == (l - 1) * T / l);
        }
    }
    SECTION("fractional bounds round toward the interior") {
        // i=2, T=10, l=3: raw window [10/3, 40/3] -> [4, 13]
        const auto w = chunk_window_raw(2, 10, 3);
        CHECK(w.start == 4);
        CHECK(w.end == 13);
    }
    SECTION("invalid arguments") {
        CHECK_THROWS_AS(chunk_window(0, 10, 2), InvalidArgument);
        CHECK_THROWS_AS(chunk_window(1, 10, 11), InvalidArgument);
        CHECK_THROWS_AS(chunk_window(1, 0, 1), InvalidArgument);
    }
}

TEST_CASE("noise schedule validation") {
    CHECK_THROWS_AS(NoiseSchedule(0, 1), InvalidArgument);
    CHECK_THROWS_AS(NoiseSchedule(4, 5), InvalidArgument);
    const NoiseSchedule sched(8, 2);
    CHECK(sched.sigma(0) == 0.0);
    CHECK(sched.sigma(8) == 1.0);
    CHECK(sched.sigma(2) == 0.25);
    CHECK(sched.dt_mag() == 0.125);
    CHECK(sched.dt_signed() == -0.125);
    CHECK_THROWS_AS(sched.sigma(9), InvalidArgument);
    // monotone
    for (std::int64_t t = 1; t <= 8; ++t) CHECK(sched.sigma(t) > sched.sigma(t - 1));
}

TEST_CASE("rng determinism") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.gaussian() == b.gaussian());
    const Tensor t1 = gaussian_tensor({1, 2, 2, 2}, 7);
    const Tensor t2 = gaussian_tensor({1, 2, 2, 2}, 7);
    CHECK(t1.v == t2.v);
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}
