#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "lock/rng.hpp"
#include "lock/slock.hpp"

using lock::GridSpec;
using lock::Matrix;
using lock::ParameterMap;
using lock::Vector;

namespace {

lock::LinearGaussianSSM identity_model(Eigen::Index l, double q_sd, double r_sd) {
    lock::LinearGaussianSSM m;
    m.F = Matrix::Identity(l, l);
    m.H = Matrix::Identity(l, l);
    m.Q = q_sd * q_sd * Matrix::Identity(l, l);
    m.R = r_sd * r_sd * Matrix::Identity(l, l);
    m.x0 = Vector::Zero(l);
    m.V0 = Matrix::Identity(l, l);
    return m;
}

Vector random_vector(lock::CounterRng& rng, Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

/// Every entry gets its own label (row-major), so the map imposes no tying.
ParameterMap unique_label_map(Eigen::Index l) {
    ParameterMap map;
    map.p = lock::IntMatrix::Zero(l, l);
    for (Eigen::Index i = 0; i < l; ++i)
        for (Eigen::Index j = 0; j < l; ++j)
            map.p(i, j) = static_cast<int>(i * l + j) + 1;
    map.alpha = static_cast<int>(l * l);
    return map;
}

}  // namespace

TEST_CASE("summed regressor matches hand-evaluated examples") {
    SECTION("two labels, swapped across rows") {
        ParameterMap map;
        map.p = lock::IntMatrix(2, 2);
        map.p << 1, 2, 2, 1;
        map.alpha = 2;
        map.validate();
        Vector y(2);
        y << 3.0, 5.0;
        const Matrix xi = lock::build_xi(map, y);
        Matrix expected(2, 2);
        expected << 3.0, 5.0, 5.0, 3.0;
        CHECK((xi - expected).norm() == 0.0);
    }
    SECTION("structural zeros contribute nothing") {
        ParameterMap map;
        map.p = lock::IntMatrix(2, 2);
        map.p << 1, 0, 0, 1;
        map.alpha = 1;
        map.validate();
        Vector y(2);
        y << 3.0, 5.0;
        const Matrix xi = lock::build_xi(map, y);
        REQUIRE(xi.rows() == 2);
        REQUIRE(xi.cols() == 1);
        CHECK(xi(0, 0) == 3.0);
        CHECK(xi(1, 0) == 5.0);
    }
    SECTION("zero observation gives a zero regressor") {
        const ParameterMap map = lock::build_parameter_map(GridSpec(2, 2), 1);
        const Matrix xi = lock::build_xi(map, Vector::Zero(4));
        CHECK(xi.norm() == 0.0);
    }
    SECTION("shape and label violations are reported") {
        ParameterMap bad;
        bad.p = lock::IntMatrix(2, 2);
        bad.p << 1, 5, 1, 1;  // label 5 exceeds alpha
        bad.alpha = 1;
        Vector y(2);
        y << 1.0, 2.0;
        CHECK_THROWS_AS(lock::build_xi(bad, y), std::invalid_argument);

        const ParameterMap map = lock::build_parameter_map(GridSpec(2, 2), 1);
        CHECK_THROWS_AS(lock::build_xi(map, Vector::Zero(3)), std::invalid_argument);
    }
}

TEST_CASE("offset-stencil parameter maps label by relative displacement") {
    SECTION("single cell, radius zero") {
        const ParameterMap map = lock::build_parameter_map(GridSpec(1, 1), 0);
        REQUIRE(map.size() == 1);
        CHECK(map.p(0, 0) == 1);
        CHECK(map.alpha == 1);
        map.validate();
    }
    SECTION("radius one realizes all nine offsets on grids with both extents >= 2") {
        CHECK(lock::build_parameter_map(GridSpec(2, 2), 1).alpha == 9);
        CHECK(lock::build_parameter_map(GridSpec(3, 3), 1).alpha == 9);
        CHECK(lock::build_parameter_map(GridSpec(4, 5), 1).alpha == 9);
    }
    SECTION("equal displacements share a label, larger ones get zero") {
        const GridSpec g(4, 4);
        const ParameterMap map = lock::build_parameter_map(g, 1);
        map.validate();
        // offset (+1, +1) seen from two different anchor cells
        CHECK(map.p(g.index(0, 0), g.index(1, 1)) == map.p(g.index(1, 1), g.index(2, 2)));
        // offset (0, +1) likewise
        CHECK(map.p(g.index(0, 0), g.index(0, 1)) == map.p(g.index(2, 2), g.index(2, 3)));
        // distinct offsets get distinct labels
        CHECK(map.p(g.index(1, 1), g.index(0, 1)) != map.p(g.index(1, 1), g.index(2, 1)));
        // Chebyshev distance 2 or more is structurally zero
        CHECK(map.p(g.index(0, 0), g.index(0, 2)) == 0);
        CHECK(map.p(g.index(0, 0), g.index(3, 3)) == 0);
    }
    SECTION("narrow grids compress missing offsets into consecutive labels") {
        const GridSpec g(1, 3);
        const ParameterMap map = lock::build_parameter_map(g, 1);
        CHECK(map.alpha == 3);  // only (0,-1), (0,0), (0,+1) exist
        map.validate();
        lock::IntMatrix expected(3, 3);
        expected << 2, 3, 0,  //
            1, 2, 3,          //
            0, 1, 2;
        CHECK((map.p - expected).cwiseAbs().maxCoeff() == 0);
    }
    SECTION("radius zero ties nothing but the diagonal") {
        const ParameterMap map = lock::build_parameter_map(GridSpec(2, 3), 0);
        CHECK(map.alpha == 1);
        for (Eigen::Index i = 0; i < map.size(); ++i)
            for (Eigen::Index j = 0; j < map.size(); ++j)
                CHECK(map.p(i, j) == (i == j ? 1 : 0));
    }
    SECTION("negative radius is rejected") {
        CHECK_THROWS_AS(lock::build_parameter_map(GridSpec(2, 2), -1),
                        std::invalid_argument);
    }
}

TEST_CASE("parameter map validation rejects malformed maps") {
    ParameterMap map;
    map.p = lock::IntMatrix(2, 2);

    map.p << 1, 3, 3, 1;  // label 2 never used
    map.alpha = 3;
    CHECK_THROWS_AS(map.validate(), std::invalid_argument);

    map.p << 1, -1, 1, 1;
    map.alpha = 1;
    CHECK_THROWS_AS(map.validate(), std::invalid_argument);

    map.p << 1, 2, 2, 1;
    map.alpha = 1;  // label 2 out of range
    CHECK_THROWS_AS(map.validate(), std::invalid_argument);

    map.p = lock::IntMatrix::Zero(2, 3);
    map.alpha = 0;
    CHECK_THROWS_AS(map.validate(), std::invalid_argument);
}

TEST_CASE("theta solves recover uniform dynamics") {
    SECTION("identity regressor returns the target") {
        Vector theta(3);
        theta << 0.4, -1.1, 2.0;
        const Vector hat = lock::estimate_theta(Matrix::Identity(3, 3), theta);
        CHECK((hat - theta).norm() < 1e-12);
    }
    SECTION("noiseless one-cell-right translation is identified from one frame") {
        const GridSpec g(4, 4);
        const ParameterMap map = lock::build_parameter_map(g, 1);
        // new(r, c) = old(r, c-1): the offset from target cell to source cell
        // is (0, -1), so the true parameter vector is one-hot at that label.
        const int shift_label = map.p(g.index(0, 1), g.index(0, 0));
        REQUIRE(shift_label > 0);
        Vector theta_true = Vector::Zero(map.alpha);
        theta_true(shift_label - 1) = 1.0;

        const Matrix g_true = lock::theta_to_g(theta_true, map);
        lock::CounterRng rng(2024);
        const Vector y_prev = random_vector(rng, g.cells());
        const Vector y_now = g_true * y_prev;

        const Vector theta_hat = lock::estimate_theta(lock::build_xi(map, y_prev), y_now);
        CHECK((theta_hat - theta_true).norm() < 1e-8);
    }
    SECTION("arbitrary uniform dynamics identified from one frame") {
        const GridSpec g(3, 3);
        const ParameterMap map = lock::build_parameter_map(g, 1);
        lock::CounterRng rng(77);
        const Vector theta_true = random_vector(rng, map.alpha);
        const Matrix g_true = lock::theta_to_g(theta_true, map);
        const Vector y_prev = random_vector(rng, g.cells());
        const Vector theta_hat =
            lock::estimate_theta(lock::build_xi(map, y_prev), g_true * y_prev);
        CHECK((theta_hat - theta_true).norm() < 1e-8);
    }
    SECTION("stacked window solve matches a QR least-squares oracle") {
        const GridSpec g(3, 3);
        const ParameterMap map = lock::build_parameter_map(g, 1);
        lock::CounterRng rng(31);
        const int tau = 4;
        lock::ObservationWindow window(tau);
        std::vector<Vector> frames;
        for (int s = 0; s <= tau; ++s) {
            frames.push_back(random_vector(rng, g.cells()));
            window.push(frames.back());
        }
        const Vector theta_hat = lock::estimate_theta_window(map, window);

        const Eigen::Index l = g.cells();
        Matrix xi(tau * l, map.alpha);
        Vector target(tau * l);
        for (int s = 0; s < tau; ++s) {
            xi.middleRows(s * l, l) =
                lock::build_xi(map, frames[static_cast<std::size_t>(s)]);
            target.segment(s * l, l) = frames[static_cast<std::size_t>(s) + 1];
        }
        const Vector oracle = xi.colPivHouseholderQr().solve(target);
        CHECK((theta_hat - oracle).norm() < 1e-8);
    }
}

TEST_CASE("theta_to_g respects the parameter map exactly") {
    const GridSpec g(3, 3);
    const ParameterMap map = lock::build_parameter_map(g, 1);
    lock::CounterRng rng(5);
    const Vector theta = random_vector(rng, map.alpha);

    SECTION("zero parameters give the zero operator") {
        CHECK(lock::theta_to_g(Vector::Zero(map.alpha), map).norm() == 0.0);
    }
    SECTION("two-label example by substitution") {
        ParameterMap small;
        small.p = lock::IntMatrix(2, 2);
        small.p << 1, 2, 2, 1;
        small.alpha = 2;
        Vector ab(2);
        ab << -0.3, 1.7;
        const Matrix gm = lock::theta_to_g(ab, small);
        Matrix expected(2, 2);
        expected << -0.3, 1.7, 1.7, -0.3;
        CHECK((gm - expected).norm() == 0.0);
    }
    SECTION("entries are constant on label classes and zero off-support") {
        const Matrix gm = lock::theta_to_g(theta, map);
        for (Eigen::Index i = 0; i < map.size(); ++i)
            for (Eigen::Index j = 0; j < map.size(); ++j) {
                if (map.p(i, j) == 0)
                    CHECK(gm(i, j) == 0.0);
                else
                    CHECK(gm(i, j) == theta(map.p(i, j) - 1));
            }
    }
    SECTION("sparse variant matches the dense one with the map's pattern") {
        const lock::SparseMatrix gs = lock::theta_to_g_sparse(theta, map);
        CHECK((Matrix(gs) - lock::theta_to_g(theta, map)).norm() == 0.0);
        for (Eigen::Index i = 0; i < gs.rows(); ++i)
            for (lock::SparseMatrix::InnerIterator it(gs, i); it; ++it)
                CHECK(map.p(it.row(), it.col()) > 0);
    }
    SECTION("length mismatches are rejected") {
        CHECK_THROWS_AS(lock::theta_to_g(Vector::Zero(map.alpha + 1), map),
                        std::invalid_argument);
    }
}

TEST_CASE("relabeling permutes theta but leaves the operator unchanged") {
    const GridSpec g(3, 3);
    const ParameterMap map = lock::build_parameter_map(g, 1);
    lock::CounterRng rng(404);

    // Permute labels 1..alpha.
    std::vector<int> perm(static_cast<std::size_t>(map.alpha));
    std::iota(perm.begin(), perm.end(), 1);
    for (std::size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1],
                  perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    ParameterMap relabeled = map;
    for (Eigen::Index i = 0; i < map.size(); ++i)
        for (Eigen::Index j = 0; j < map.size(); ++j)
            if (map.p(i, j) > 0)
                relabeled.p(i, j) = perm[static_cast<std::size_t>(map.p(i, j)) - 1];
    relabeled.validate();

    const Vector y_prev = random_vector(rng, g.cells());
    const Vector y_now = random_vector(rng, g.cells());
    const Vector theta = lock::estimate_theta(lock::build_xi(map, y_prev), y_now);
    const Vector theta_rel =
        lock::estimate_theta(lock::build_xi(relabeled, y_prev), y_now);

    for (int k = 1; k <= map.alpha; ++k)
        CHECK(std::abs(theta_rel(perm[static_cast<std::size_t>(k) - 1] - 1) - theta(k - 1)) <
              1e-12);
    CHECK((lock::theta_to_g(theta_rel, relabeled) - lock::theta_to_g(theta, map)).norm() <
          1e-12);
}

TEST_CASE("unique-label stacking reproduces the unconstrained estimator") {
    const Eigen::Index l = 4;
    const ParameterMap map = unique_label_map(l);
    map.validate();
    lock::CounterRng rng(99);

    auto compare_for_tau = [&](int tau, double tol) {
        lock::ObservationWindow window(tau);
        std::vector<Vector> frames;
        for (int s = 0; s <= tau; ++s) {
            frames.push_back(random_vector(rng, l));
            window.push(frames.back());
        }
        const Vector theta = lock::estimate_theta_window(map, window);
        const Matrix g_slock = lock::theta_to_g(theta, map);

        Matrix y_prev(l, tau), y_now(l, tau);
        for (int s = 0; s < tau; ++s) {
            y_prev.col(s) = frames[static_cast<std::size_t>(s)];
            y_now.col(s) = frames[static_cast<std::size_t>(s) + 1];
        }
        const Matrix g_free = lock::estimate_g(y_now, y_prev);
        CHECK((g_slock - g_free).norm() < tol);
    };

    SECTION("tau = l: the system is determined") { compare_for_tau(4, 1e-10); }
    SECTION("tau < l: both give the minimum-norm solution") { compare_for_tau(2, 1e-8); }
}

TEST_CASE("slock_run matches lock_run when every entry has its own label") {
    const Eigen::Index l = 4;
    const ParameterMap map = unique_label_map(l);
    lock::LinearGaussianSSM model = identity_model(l, 0.05, 0.1);
    model.F = 0.9 * Matrix::Identity(l, l);

    lock::CounterRng rng(310);
    std::vector<Vector> observations;
    Vector x = random_vector(rng, l);
    for (int t = 0; t < 14; ++t) {
        x = 0.95 * x + 0.05 * random_vector(rng, l);
        observations.push_back(x + 0.1 * random_vector(rng, l));
    }

    lock::LockConfig cfg;
    cfg.tau = 4;
    cfg.eta = 0.7;
    cfg.c = 0.3;

    const auto tied = lock::slock_run(model, observations, map, cfg);
    const auto free = lock::lock_run(model, observations, cfg);

    REQUIRE(tied.update_times == free.update_times);
    REQUIRE(tied.f_history.size() == free.f_history.size());
    for (std::size_t k = 0; k < tied.f_history.size(); ++k)
        CHECK((Matrix(tied.f_history[k]) - free.f_history[k]).norm() < 1e-8);
    REQUIRE(tied.states.size() == free.states.size());
    for (std::size_t t = 0; t < tied.states.size(); ++t)
        CHECK((tied.states[t].x_filt - free.states[t].x_filt).norm() < 1e-8);
}

TEST_CASE("slock_run blends on schedule and within the trust bound") {
    const GridSpec g(3, 3);
    const ParameterMap map = lock::build_parameter_map(g, 1);
    const lock::LinearGaussianSSM model = identity_model(g.cells(), 0.05, 0.1);

    lock::CounterRng rng(808);
    std::vector<Vector> observations;
    for (int t = 0; t < 10; ++t) observations.push_back(random_vector(rng, g.cells()));

    SECTION("tau = 1 fires at every step from t = 1") {
        lock::LockConfig cfg;
        cfg.tau = 1;
        const auto run = lock::slock_run(model, observations, map, cfg);
        REQUIRE(run.update_times.size() == observations.size() - 1);
        for (std::size_t k = 0; k < run.update_times.size(); ++k)
            CHECK(run.update_times[k] == static_cast<Eigen::Index>(k) + 1);
    }
    SECTION("tau = 3 fires at multiples of tau once the window is full") {
        lock::LockConfig cfg;
        cfg.tau = 3;
        const auto run = lock::slock_run(model, observations, map, cfg);
        const std::vector<Eigen::Index> expected{3, 6, 9};
        CHECK(run.update_times == expected);
    }
    SECTION("consecutive operators differ by at most eta * c per entry") {
        lock::LockConfig cfg;
        cfg.tau = 1;
        cfg.eta = 0.6;
        cfg.c = 0.05;
        const auto run = lock::slock_run(model, observations, map, cfg);
        Matrix prev = model.F;
        for (const auto& f : run.f_history) {
            const Matrix cur(f);
            CHECK((cur - prev).cwiseAbs().maxCoeff() <= cfg.eta * cfg.c + 1e-12);
            prev = cur;
        }
    }
    SECTION("input validation") {
        lock::LockConfig cfg;
        CHECK_THROWS_AS(lock::slock_run(model, {}, map, cfg), std::invalid_argument);
        const lock::LinearGaussianSSM wrong = identity_model(4, 0.05, 0.1);
        CHECK_THROWS_AS(lock::slock_run(wrong, observations, map, cfg),
                        std::invalid_argument);
    }
}

TEST_CASE("all-zero maps decay the operator toward zero") {
    const Eigen::Index l = 4;
    ParameterMap map;
    map.p = lock::IntMatrix::Zero(l, l);
    map.alpha = 0;
    map.validate();

    CHECK(lock::build_xi(map, Vector::Ones(l)).cols() == 0);
    CHECK(lock::estimate_theta(Matrix(l, 0), Vector::Ones(l)).size() == 0);
    CHECK(lock::theta_to_g(Vector(0), map).norm() == 0.0);

    const lock::LinearGaussianSSM model = identity_model(l, 0.05, 0.1);
    lock::CounterRng rng(6);
    std::vector<Vector> observations;
    for (int t = 0; t < 6; ++t)
        observations.push_back(Vector::Ones(l) + 0.1 * random_vector(rng, l));

    lock::LockConfig cfg;
    cfg.tau = 1;
    cfg.eta = 1.0;
    cfg.c = 1.0;
    const auto run = lock::slock_run(model, observations, map, cfg);
    REQUIRE(!run.f_history.empty());
    CHECK(Matrix(run.f_history.front()).norm() == 0.0);  // I pulled fully to 0
    // With a zero transition every later prediction is exactly zero.
    CHECK(run.states[2].x_pred.norm() == 0.0);
    CHECK(run.states.back().x_pred.norm() == 0.0);
}

TEST_CASE("non-identity observation operators route through the dense fallback") {
    const GridSpec g(2, 2);
    const ParameterMap map = lock::build_parameter_map(g, 1);
    lock::LinearGaussianSSM model = identity_model(g.cells(), 0.05, 0.1);
    Vector h_diag(4);
    h_diag << 2.0, 1.0, 0.5, 1.5;
    model.H = h_diag.asDiagonal();

    lock::CounterRng rng(21);
    std::vector<Vector> observations;
    for (int t = 0; t < 2; ++t) observations.push_back(random_vector(rng, g.cells()));

    lock::LockConfig cfg;
    cfg.tau = 1;
    cfg.eta = 0.8;
    cfg.c = 0.4;
    const auto run = lock::slock_run(model, observations, map, cfg);
    REQUIRE(run.f_history.size() == 1);

    const Vector theta =
        lock::estimate_theta(lock::build_xi(map, observations[0]), observations[1]);
    const Matrix f_hat =
        lock::pinv(model.H) * lock::theta_to_g(theta, map) * model.H;
    const Matrix expected = lock::blend_update(model.F, f_hat, cfg.eta, cfg.c);
    CHECK((Matrix(run.f_history[0]) - expected).norm() < 1e-12);
}

TEST_CASE("stacking more transitions reduces estimator variance under noise") {
    const GridSpec g(3, 3);
    const ParameterMap map = lock::build_parameter_map(g, 1);
    const int shift_label = map.p(g.index(1, 1), g.index(1, 1));  // offset (0, 0)
    Vector theta_true = Vector::Zero(map.alpha);
    theta_true(shift_label - 1) = 1.0;
    const Matrix g_true = lock::theta_to_g(theta_true, map);
    const double noise_sd = 0.1;

    double err_short = 0.0, err_long = 0.0;
    const int seeds = 100;
    for (int s = 0; s < seeds; ++s) {
        lock::CounterRng rng(lock::derive_seed(1234, static_cast<std::uint64_t>(s)));
        std::vector<Vector> frames;
        Vector y = random_vector(rng, g.cells());
        frames.push_back(y);
        for (int t = 0; t < 8; ++t) {
            y = g_true * y + noise_sd * random_vector(rng, g.cells());
            frames.push_back(y);
        }

        lock::ObservationWindow w1(1), w8(8);
        for (std::size_t t = frames.size() - 2; t < frames.size(); ++t)
            w1.push(frames[t]);
        for (const auto& f : frames) w8.push(f);

        err_short += (lock::estimate_theta_window(map, w1) - theta_true).squaredNorm();
        err_long += (lock::estimate_theta_window(map, w8) - theta_true).squaredNorm();
    }
    CHECK(err_long < err_short);
}

TEST_CASE("parameter map files round-trip and reject malformed input") {
    SECTION("round trip preserves labels and alpha") {
        const ParameterMap map = lock::build_parameter_map(GridSpec(3, 3), 1);
        std::stringstream buf;
        lock::save_parameter_map(map, buf);
        const ParameterMap loaded = lock::load_parameter_map(buf);
        CHECK(loaded.alpha == map.alpha);
        CHECK((loaded.p - map.p).cwiseAbs().maxCoeff() == 0);
    }
    SECTION("hand-written map parses") {
        std::stringstream buf("1 2\n2 1\n");
        const ParameterMap map = lock::load_parameter_map(buf);
        CHECK(map.alpha == 2);
        CHECK(map.p(0, 0) == 1);
        CHECK(map.p(1, 0) == 2);
    }
    SECTION("malformed inputs are rejected") {
        auto loads = [](const std::string& text) {
            std::stringstream buf(text);
            return lock::load_parameter_map(buf);
        };
        CHECK_THROWS_AS(loads(""), std::invalid_argument);            // empty
        CHECK_THROWS_AS(loads("1 2\n2\n"), std::invalid_argument);    // ragged row
        CHECK_THROWS_AS(loads("1 2\n2 1\n0 0\n"), std::invalid_argument);  // not square
        CHECK_THROWS_AS(loads("1 x\n2 1\n"), std::invalid_argument);  // non-integer
        CHECK_THROWS_AS(loads("1 3\n3 1\n"), std::invalid_argument);  // label gap
        CHECK_THROWS_AS(loads("1 -1\n1 1\n"), std::invalid_argument);  // negative
        CHECK_THROWS_AS(lock::load_parameter_map("/nonexistent/map.txt"),
                        std::runtime_error);
    }
}
