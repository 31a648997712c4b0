#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "kanite/ops.hpp"
#include "kanite/tensor.hpp"
#include "testutil.hpp"

using namespace kanite;

TEST_CASE("elementwise forward values") {
  Tensor a(Shape{2}, {1.0, 2.0});
  Tensor b(Shape{2}, {3.0, 4.0});
  Tensor c = add(a, b);
  CHECK(c[0] == 4.0);
  CHECK(c[1] == 6.0);
  CHECK(sub(b, a)[0] == 2.0);
  CHECK(mul(a, b)[1] == 8.0);
  CHECK(div(b, a)[1] == 2.0);
}

TEST_CASE("broadcast over a leading batch dimension") {
  Tensor m(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row(Shape{3}, {10, 20, 30});
  Tensor out = add(m, row);
  CHECK(out.at(0, 0) == 11.0);
  CHECK(out.at(1, 2) == 36.0);
  Tensor s = Tensor::scalar(2.0);
  CHECK(mul(m, s).at(1, 1) == 10.0);
  CHECK_THROWS_AS(add(Tensor(Shape{2, 3}, std::vector<double>(6, 0.0)),
                      Tensor(Shape{2, 2}, std::vector<double>(4, 0.0))),
                  ShapeError);
}

TEST_CASE("matmul identity and shape errors") {
  Tensor eye(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor a(Shape{3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor out = matmul(eye, a);
  for (std::size_t i = 0; i < 6; ++i) CHECK(out[i] == a[i]);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("silu value and derivative at zero") {
  Tensor x = Tensor::scalar(0.0, true);
  CHECK(silu(x).item() == 0.0);
  Tape tape;
  Tensor y = silu(x);
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("backward of sum of squares") {
  Tensor x(Shape{3}, {1.0, 2.0, 3.0}, true);
  Tape tape;
  Tensor loss = sum(mul(x, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
  CHECK(x.grad()[2] == 6.0);
}

TEST_CASE("backward of mean") {
  Tensor x(Shape{4}, {1.0, 2.0, 3.0, 4.0}, true);
  Tape tape;
  tape.backward(mean(x));
  for (int i = 0; i < 4; ++i) CHECK(x.grad()[i] == 0.25);
}

TEST_CASE("backward rejects non-scalar and detached losses") {
  Tensor x(Shape{2}, {1.0, 2.0}, true);
  Tape tape;
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
  Tensor leaf = Tensor::scalar(1.0, true);
  CHECK_THROWS_AS(tape.backward(leaf), KaniteError);
}

TEST_CASE("two backward calls double leaf gradients exactly") {
  Tensor x(Shape{3}, {0.5, -1.0, 2.0}, true);
  Tape tape;
  Tensor loss = sum(mul(silu(x), x));
  tape.backward(loss);
  std::vector<double> once = x.grad();
  tape.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(x.grad()[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-15));
  }
}

TEST_CASE("detach cuts the gradient path and preserves values") {
  Tensor x(Shape{2}, {1.5, -0.5}, true);
  Tensor d = x.detach();
  CHECK_FALSE(d.requires_grad());
  CHECK(d[0] == x[0]);
  CHECK(d[1] == x[1]);

  Tensor w(Shape{2}, {2.0, 3.0}, true);
  Tape tape;
  Tensor loss = sum(mul(x.detach(), w));
  tape.backward(loss);
  CHECK_FALSE(x.has_grad());
  CHECK(w.grad()[0] == 1.5);
}

TEST_CASE("domain errors carry the offending index") {
  Tensor x(Shape{3}, {1.0, -2.0, 3.0});
  CHECK_THROWS_WITH_AS(log(x), doctest::Contains("index 1"), DomainError);
  CHECK_THROWS_WITH_AS(div(x, Tensor(Shape{3}, {1.0, 0.0, 1.0})),
                       doctest::Contains("index 1"), DomainError);
}

TEST_CASE("linearity of backward") {
  std::mt19937_64 rng(7);
  Tensor x = Tensor::randn(Shape{4}, rng, 1.0, true);
  auto grad_of = [&](const std::function<Tensor()>& f) {
    x.zero_grad();
    Tape tape;
    tape.backward(f());
    return x.grad();
  };
  auto f = [&]() { return sum(mul(x, x)); };
  auto g = [&]() { return sum(silu(x)); };
  double a = 2.5, b = -1.25;
  auto combined = [&]() {
    return add(mul(f(), Tensor::scalar(a)), mul(g(), Tensor::scalar(b)));
  };
  auto gf = grad_of(f);
  auto gg = grad_of(g);
  auto gc = grad_of(combined);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
  }
}

TEST_CASE("finite-difference check for every primitive") {
  std::mt19937_64 rng(123);
  auto randn = [&](Shape s) { return Tensor::randn(s, rng, 1.0, true); };

  SUBCASE("binary elementwise") {
    Tensor a = randn(Shape{3, 4});
    Tensor b = randn(Shape{3, 4});
    Tensor r = randn(Shape{4});
    // keep div well away from zero
    for (auto& v : b.values()) v = v > 0 ? v + 0.5 : v - 0.5;
    for (auto& v : r.values()) v = v > 0 ? v + 0.5 : v - 0.5;
    CHECK(testutil::max_grad_rel_error({a, b}, [&] {
            return sum(mul(add(a, b), sub(a, b)));
          }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a, b}, [&] {
            return sum(div(a, b));
          }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a, r}, [&] {
            return sum(mul(a, r));  // broadcast row
          }) < 1e-4);
  }

  SUBCASE("matmul, transpose, reshape") {
    Tensor a = randn(Shape{3, 4});
    Tensor b = randn(Shape{4, 2});
    CHECK(testutil::max_grad_rel_error({a, b}, [&] {
            return sum(square(matmul(a, b)));
          }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a}, [&] {
            return sum(square(transpose(a)));
          }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a}, [&] {
            return sum(silu(reshape(a, Shape{2, 6})));
          }) < 1e-4);
  }

  SUBCASE("reductions") {
    Tensor a = randn(Shape{4, 3});
    CHECK(testutil::max_grad_rel_error({a}, [&] {
            return sum(square(sum(a, 0)));
          }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a}, [&] {
            return sum(square(mean(a, 1)));
          }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a}, [&] { return mean(a); }) < 1e-4);
  }

  SUBCASE("unary maps") {
    Tensor a = randn(Shape{5});
    Tensor pos(Shape{5}, {0.5, 1.5, 2.5, 0.25, 3.0}, true);
    CHECK(testutil::max_grad_rel_error({a}, [&] { return sum(exp(a)); }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({pos}, [&] { return sum(log(pos)); }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({pos}, [&] {
            return sum(pow(pos, 1.7));
          }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a}, [&] { return sum(silu(a)); }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a}, [&] { return sum(square(a)); }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a}, [&] {
            return sum(mul(relu(a), a));
          }) < 1e-4);
  }

  SUBCASE("softmax, concat, index_select, repeat, pairwise") {
    Tensor a = randn(Shape{3, 4});
    Tensor b = randn(Shape{2, 4});
    Tensor c = randn(Shape{3, 2});
    CHECK(testutil::max_grad_rel_error({a}, [&] {
            return sum(square(softmax_rows(a)));
          }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a, b}, [&] {
            return sum(square(concat({a, b}, 0)));
          }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a, c}, [&] {
            return sum(silu(concat({a, c}, 1)));
          }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a}, [&] {
            return sum(square(index_select(a, 0, {2, 0, 0})));
          }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a}, [&] {
            return sum(square(index_select(a, 1, {3, 1})));
          }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({c}, [&] {
            return sum(square(repeat_interleave(c, 3, 1)));
          }) < 1e-4);
    CHECK(testutil::max_grad_rel_error({a, b}, [&] {
            return sum(silu(pairwise_sqdist(a, b)));
          }) < 1e-4);
  }
}

TEST_CASE("zero-grad discipline") {
  Tensor x(Shape{2}, {1.0, 2.0}, true);
  {
    Tape tape;
    tape.backward(sum(mul(x, x)));
  }
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("no recording without an active tape") {
  Tensor x(Shape{2}, {1.0, 2.0}, true);
  Tensor y = mul(x, x);  // evaluated outside any tape
  CHECK_FALSE(y.requires_grad());
  CHECK(y.tape() == nullptr);
}
