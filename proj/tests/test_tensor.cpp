#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ccoma/kernels.hpp"
#include "ccoma/optim.hpp"
#include "ccoma/rng.hpp"
#include "ccoma/tensor.hpp"

using namespace ccoma;

namespace {

Value random_tensor(std::vector<int> dims, Rng& rng, bool requires_grad = true, double lo = -1.0,
                    double hi = 1.0) {
    Value v = zeros(std::move(dims), requires_grad);
    fill_uniform(*v, rng, lo, hi);
    return v;
}

// analytic gradient vs central differences for a scalar graph over one input
void check_gradient(const std::function<Value(Tape&, const Value&)>& graph, const Value& x,
                    double tol = 1e-4, double h = 1e-6) {
    Tape tape(true);
    Value loss = graph(tape, x);
    tape.backward(loss);
    auto analytic = tape.grad(x);
    REQUIRE(analytic.size() == x->numel());

    std::vector<double> fd;
    central_differences(
        [&](const std::vector<double>& probe) {
            Value px = make_tensor(x->dims, probe);
            Tape t2(false);
            return graph(t2, px)->scalar();
        },
        x->data, h, fd);

    for (std::size_t i = 0; i < fd.size(); ++i) {
        const double denom = std::max({std::abs(fd[i]), std::abs(analytic[i]), 1e-6});
        CHECK(std::abs(fd[i] - analytic[i]) / denom < tol);
    }
}

}  // namespace

TEST_CASE("forward values of the analytic examples") {
    Tape t(false);
    CHECK(t.sigmoid(scalar_tensor(0.0))->scalar() == doctest::Approx(0.5));

    Value sm = t.row_softmax(make_tensor({1, 3}, {0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK(sm->data[i] == doctest::Approx(1.0 / 3));

    Value m = t.masked_row_softmax(make_tensor({1, 3}, {1, 2, 5}), make_tensor({1, 3}, {1, 1, 0}));
    CHECK(m->data[0] == doctest::Approx(0.2689).epsilon(1e-3));
    CHECK(m->data[1] == doctest::Approx(0.7311).epsilon(1e-3));
    CHECK(m->data[2] == 0.0);
    CHECK(m->data[0] + m->data[1] + m->data[2] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("sigmoid derivative at zero is exactly a quarter") {
    Value x = make_tensor({1}, {0.0}, true);
    Tape t(true);
    Value loss = t.sum_all(t.sigmoid(x));
    t.backward(loss);
    CHECK(t.grad(x)[0] == doctest::Approx(0.25));
}

TEST_CASE("shape mismatches are rejected with both shapes named") {
    Tape t(false);
    Value a = zeros({3, 4});
    Value b = zeros({5, 2});
    try {
        t.matmul(a, b);
        FAIL("expected an exception");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[3,4]") != std::string::npos);
        CHECK(msg.find("[5,2]") != std::string::npos);
    }
    CHECK_THROWS_AS(t.add(zeros({2, 2}), zeros({3, 3})), std::invalid_argument);
    CHECK_THROWS_AS(t.mul(zeros({2, 2}), zeros({2, 3})), std::invalid_argument);
}

TEST_CASE("all-masked softmax row is an error") {
    Tape t(false);
    CHECK_THROWS_AS(
        t.masked_row_softmax(make_tensor({2, 2}, {1, 2, 3, 4}), make_tensor({2, 2}, {1, 1, 0, 0})),
        std::invalid_argument);
}

TEST_CASE("backward of a constant multiple of the sum") {
    Rng rng(1);
    Value x = random_tensor({3, 5}, rng);
    Tape t(true);
    Value loss = t.sum_all(t.scale(x, 2.0));
    t.backward(loss);
    for (double g : t.grad(x)) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("backward requires a scalar produced on the tape") {
    Tape t(true);
    Value x = random_tensor(
        {2, 2}, *[] { static Rng r(2); return &r; }());
    Value y = t.add(x, x);
    CHECK_THROWS_AS(t.backward(y), std::invalid_argument);   // not scalar
    CHECK_THROWS_AS(t.backward(x), std::invalid_argument);   // not on tape
}

TEST_CASE("matmul gradient matches central finite differences") {
    Rng rng(3);
    Value a = random_tensor({3, 4}, rng);
    Value b = random_tensor({4, 2}, rng);
    Tape t(true);
    Value loss = t.sum_all(t.matmul(a, b));
    t.backward(loss);

    for (const Value& v : {a, b}) {
        auto analytic = t.grad(v);
        std::vector<double> fd;
        central_differences(
            [&](const std::vector<double>& probe) {
                Tape t2(false);
                Value pa = v == a ? make_tensor(a->dims, probe) : a;
                Value pb = v == b ? make_tensor(b->dims, probe) : b;
                return t2.sum_all(t2.matmul(pa, pb))->scalar();
            },
            v->data, 1e-6, fd);
        for (std::size_t i = 0; i < fd.size(); ++i)
            CHECK(std::abs(fd[i] - analytic[i]) /
                      std::max({std::abs(fd[i]), std::abs(analytic[i]), 1e-6}) <
                  1e-5);
    }
}

TEST_CASE("masked softmax passes no gradient through masked positions") {
    Rng rng(4);
    Value x = random_tensor({2, 4}, rng);
    Value mask = make_tensor({2, 4}, {1, 1, 0, 1, 1, 0, 1, 1});
    Tape t(true);
    Value p = t.masked_row_softmax(x, mask);
    // weight the masked output entries heavily: they are exactly 0, so the
    // loss and the input gradient ignore them entirely
    Value w = make_tensor({2, 4}, {1, 2, 1000, 3, 4, 1000, 5, 6});
    Value loss = t.sum_all(t.mul(p, w));
    t.backward(loss);
    auto g = t.grad(x);
    CHECK(g[2] == 0.0);
    CHECK(g[5] == 0.0);
    CHECK(p->data[2] == 0.0);
    CHECK(p->data[5] == 0.0);
}

TEST_CASE("every primitive matches finite differences on random instances") {
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        Value x = random_tensor({3, 4}, rng);
        Value other = random_tensor({3, 4}, rng, false);
        Value right = random_tensor({4, 3}, rng, false);
        Value bias = random_tensor({4}, rng, false);
        Value pos = random_tensor({3, 4}, rng, true, 0.1, 2.0);
        Value mask = make_tensor({3, 4}, {1, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 0});

        check_gradient([&](Tape& t, const Value& v) { return t.sum_all(t.matmul(v, right)); }, x);
        check_gradient([&](Tape& t, const Value& v) { return t.sum_all(t.transpose(v)); }, x);
        check_gradient([&](Tape& t, const Value& v) { return t.sum_all(t.add(v, other)); }, x);
        check_gradient([&](Tape& t, const Value& v) { return t.sum_all(t.add(v, bias)); }, x);
        check_gradient([&](Tape& t, const Value& v) { return t.sum_all(t.sub(other, v)); }, x);
        check_gradient([&](Tape& t, const Value& v) { return t.sum_all(t.mul(v, other)); }, x);
        check_gradient([&](Tape& t, const Value& v) { return t.sum_all(t.mul(v, v)); }, x);
        check_gradient([&](Tape& t, const Value& v) { return t.sum_all(t.scale(v, -1.7)); }, x);
        check_gradient(
            [&](Tape& t, const Value& v) { return t.sum_all(t.concat({v, other}, 0)); }, x);
        check_gradient(
            [&](Tape& t, const Value& v) { return t.sum_all(t.concat({other, v}, 1)); }, x);
        check_gradient(
            [&](Tape& t, const Value& v) { return t.sum_all(t.slice_cols(v, 1, 2)); }, x);
        check_gradient(
            [&](Tape& t, const Value& v) { return t.sum_all(t.gather_rows(v, {2, 0, 2})); }, x);
        check_gradient([&](Tape& t, const Value& v) { return t.mean_all(v); }, x);
        check_gradient(
            [&](Tape& t, const Value& v) { return t.sum_all(t.sum_axis(v, 0)); }, x);
        check_gradient(
            [&](Tape& t, const Value& v) { return t.sum_all(t.mean_axis(v, 1)); }, x);
        check_gradient([&](Tape& t, const Value& v) { return t.sum_all(t.tanh(v)); }, x);
        check_gradient([&](Tape& t, const Value& v) { return t.sum_all(t.sigmoid(v)); }, x);
        check_gradient([&](Tape& t, const Value& v) { return t.sum_all(t.exp(v)); }, x);
        check_gradient([&](Tape& t, const Value& v) { return t.sum_all(t.log(v)); }, pos);
        check_gradient(
            [&](Tape& t, const Value& v) {
                return t.sum_all(t.mul(t.row_softmax(v), other));
            },
            x);
        check_gradient(
            [&](Tape& t, const Value& v) {
                return t.sum_all(t.mul(t.masked_row_softmax(v, mask), other));
            },
            x);
        // relu checked away from the kink
        Value far = random_tensor({3, 4}, rng, true, 0.5, 1.5);
        check_gradient([&](Tape& t, const Value& v) { return t.sum_all(t.relu(v)); }, far);
    }
}

TEST_CASE("rmsprop single step matches the hand-evaluated update") {
    ParamStore params;
    Value p = params.add("p", zeros({1}));
    p->ensure_grad();
    p->grad[0] = 1.0;
    RmsPropState st{5e-4, 0.99, 1e-5, {}};
    st.init(params);
    rmsprop_step(params, st);
    CHECK(st.v[0][0] == doctest::Approx(0.01));
    CHECK(p->data[0] == doctest::Approx(-5e-4 / (0.1 + 1e-5)).epsilon(1e-9));
}

TEST_CASE("rmsprop with zero gradient decays the accumulator only") {
    ParamStore params;
    Value p = params.add("p", make_tensor({2}, {1.0, -2.0}));
    p->ensure_grad();
    RmsPropState st{5e-4, 0.99, 1e-5, {}};
    st.init(params);
    st.v[0] = {0.5, 0.25};
    rmsprop_step(params, st);
    CHECK(p->data[0] == 1.0);
    CHECK(p->data[1] == -2.0);
    CHECK(st.v[0][0] == doctest::Approx(0.495));
    CHECK(st.v[0][1] == doctest::Approx(0.2475));
}

TEST_CASE("rmsprop is deterministic from identical state") {
    auto run = [] {
        ParamStore params;
        Value p = params.add("p", make_tensor({3}, {0.3, -0.7, 1.1}));
        p->ensure_grad();
        p->grad = {0.1, -0.2, 0.05};
        RmsPropState st{5e-4, 0.99, 1e-5, {}};
        st.init(params);
        rmsprop_step(params, st);
        return p->data;
    };
    CHECK(run() == run());
}

TEST_CASE("tape replay is bit-identical") {
    Rng rng(11);
    Value a = random_tensor({4, 4}, rng);
    Value b = random_tensor({4, 4}, rng);
    auto run = [&] {
        Tape t(true);
        Value y = t.matmul(t.row_softmax(t.matmul(a, b)), t.tanh(b));
        Value loss = t.sum_all(y);
        t.backward(loss);
        auto g = t.grad(a);
        return std::vector<double>(g.begin(), g.end());
    };
    CHECK(run() == run());
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
    Rng rng(12);
    const int m = 97, k = 64, n = 33;
    std::vector<double> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    std::vector<double> c1(static_cast<std::size_t>(m) * n), c2(c1.size());
    kernels::matmul_serial(a.data(), b.data(), c1.data(), m, k, n);
    kernels::matmul_omp(a.data(), b.data(), c2.data(), m, k, n);
    CHECK(c1 == c2);

    std::vector<double> s1(a.size()), s2(a.size());
    kernels::row_softmax_serial(a.data(), nullptr, -1e9, s1.data(), m, k);
    kernels::row_softmax_omp(a.data(), nullptr, -1e9, s2.data(), m, k);
    CHECK(s1 == s2);

    std::vector<double> u1(a.size()), u2(a.size());
    kernels::unary_serial(kernels::Unary::Tanh, a.data(), u1.data(), a.size());
    kernels::unary_omp(kernels::Unary::Tanh, a.data(), u2.data(), a.size());
    CHECK(u1 == u2);
}

TEST_CASE("masked softmax rows sum to one within 1e-9") {
    Rng rng(13);
    for (int rep = 0; rep < 50; ++rep) {
        Value logits = random_tensor({6, 6}, rng, false, -30, 30);
        Value mask = zeros({6, 6});
        std::uniform_int_distribution<int> coin(0, 1);
        for (int i = 0; i < 6; ++i) {
            mask->data[static_cast<std::size_t>(i) * 6 + i] = 1.0;  // keep a diagonal
            for (int j = 0; j < 6; ++j)
                if (j != i) mask->data[static_cast<std::size_t>(i) * 6 + j] = coin(rng);
        }
        Tape t(false);
        Value p = t.masked_row_softmax(logits, mask);
        for (int i = 0; i < 6; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 6; ++j) {
                const double pij = p->data[static_cast<std::size_t>(i) * 6 + j];
                sum += pij;
                if (mask->data[static_cast<std::size_t>(i) * 6 + j] == 0.0) CHECK(pij == 0.0);
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}
