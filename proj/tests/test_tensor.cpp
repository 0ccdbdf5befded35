#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "ctan/ops.hpp"
#include "ctan/tensor.hpp"
#include "ctan/tensor_io.hpp"

using namespace cta;

TEST_CASE("shape bookkeeping") {
    auto t = Tensor::zeros({2, 3, 4});
    CHECK(t.rank() == 3);
    CHECK(t.numel() == 24);
    CHECK(t.extent(1) == 3);
    CHECK(t.at({1, 2, 3}) == 0.0f);

    CHECK_THROWS_AS(Tensor::zeros({2, 0, 4}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1.0f, 2.0f, 3.0f}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor().numel(), std::invalid_argument);
}

TEST_CASE("handles share the buffer, clone copies it") {
    auto a = Tensor::filled({4}, 1.0f);
    auto b = a;
    b.values_mut()[0] = 7.0f;
    CHECK(a.values()[0] == 7.0f);

    auto c = a.clone();
    c.values_mut()[0] = -1.0f;
    CHECK(a.values()[0] == 7.0f);
}

TEST_CASE("finiteness detection is an error path") {
    auto t = Tensor::from_values({2}, {1.0f, 2.0f});
    CHECK(t.all_finite());
    t.values_mut()[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK(!t.all_finite());
    CHECK_THROWS_AS(assert_all_finite(t, "test"), std::runtime_error);
}

TEST_CASE("grad buffers accumulate and clear") {
    auto t = Tensor::zeros({3});
    t.set_requires_grad(true);
    CHECK(!t.has_grad());
    t.accumulate_grad(std::vector<float>{1.0f, 2.0f, 3.0f});
    t.accumulate_grad(std::vector<float>{1.0f, 1.0f, 1.0f});
    CHECK(t.grad()[1] == 3.0f);
    t.clear_grad();
    CHECK(!t.has_grad());
}

TEST_CASE("tape records in execution order and sweeps in reverse") {
    Tape tape;
    auto x = Tensor::filled({2}, 1.5f);
    x.set_requires_grad(true);
    auto y = relu(tape, x);
    auto z = sum_all(tape, y);
    CHECK(tape.size() == 2);
    CHECK(tape.backward(z) == 2);
    CHECK(x.grad()[0] == 1.0f);
}

TEST_CASE("backward rejects non-scalar and detached losses") {
    Tape tape;
    auto x = Tensor::filled({2}, 1.0f);
    x.set_requires_grad(true);
    auto y = relu(tape, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);  // not scalar

    auto leaf = Tensor::scalar_value(3.0f);
    leaf.set_requires_grad(true);
    CHECK_THROWS_AS(tape.backward(leaf), std::invalid_argument);  // never recorded

    Tape other;
    auto loss = sum_all(other, x);
    CHECK_THROWS_AS(tape.backward(loss), std::invalid_argument);  // wrong tape
}

TEST_CASE("disabled recording produces detached outputs") {
    Tape tape;
    tape.set_recording(false);
    auto x = Tensor::filled({2}, 1.0f);
    x.set_requires_grad(true);
    auto y = relu(tape, x);
    CHECK(tape.size() == 0);
    CHECK(!y.requires_grad());
}

TEST_CASE("tensor file round trip") {
    Rng rng(5);
    auto t = Tensor::random_uniform({3, 4, 2}, -2.0, 2.0, rng);
    std::stringstream buf;
    write_tensor(buf, t);
    auto back = read_tensor(buf);
    CHECK(bitwise_equal(t, back));
}

TEST_CASE("tensor reader rejects bad magic and version") {
    Rng rng(5);
    auto t = Tensor::random_uniform({2, 2}, -1.0, 1.0, rng);
    std::stringstream buf;
    write_tensor(buf, t);
    auto text = buf.str();

    {
        auto corrupted = text;
        corrupted[0] = 'X';
        std::stringstream in(corrupted);
        CHECK_THROWS_WITH_AS(read_tensor(in), doctest::Contains("bad magic"), std::runtime_error);
    }
    {
        auto corrupted = text;
        corrupted[4] = 9;  // version field
        std::stringstream in(corrupted);
        CHECK_THROWS_WITH_AS(read_tensor(in), doctest::Contains("version"), std::runtime_error);
    }
    {
        std::stringstream in(text.substr(0, text.size() - 3));
        CHECK_THROWS_AS(read_tensor(in), std::runtime_error);
    }
}
