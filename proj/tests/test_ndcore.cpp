#include <cmath>
#include <numeric>

#include "doctest.h"
#include "nbeats/ndcore.hpp"

using namespace nbeats;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.span()) v = rng.uniform(-1.0, 1.0);
  return m;
}

Vector random_vector(std::size_t n, Rng& rng) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

}  // namespace

TEST_SUITE("ndcore") {
  TEST_CASE("affine_forward with identity weights returns the input") {
    const Vector y = affine_forward(Matrix::identity(2), Vector(2), Vector{3, -1});
    CHECK(y == Vector{3, -1});
  }

  TEST_CASE("affine_forward hand example") {
    const Vector y = affine_forward(Matrix{{1, 2}, {3, 4}}, Vector{1, 1}, Vector{1, 1});
    CHECK(y == Vector{4, 8});
  }

  TEST_CASE("affine_forward of a zero input is the bias") {
    Rng rng(3);
    const Matrix w = random_matrix(4, 3, rng);
    const Vector b = random_vector(4, rng);
    CHECK(affine_forward(w, b, Vector(3)) == b);
  }

  TEST_CASE("affine_forward rejects mismatched shapes and names them") {
    try {
      affine_forward(Matrix(2, 3), Vector(2), Vector(2));
      FAIL("no throw");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("2x3") != std::string::npos);
    }
    CHECK_THROWS_AS(affine_forward(Matrix(2, 3), Vector(3), Vector(3)), ShapeError);
  }

  TEST_CASE("affine_forward is affine in x") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix w = random_matrix(3, 4, rng);
      const Vector b = random_vector(3, rng);
      const Vector x = random_vector(4, rng), z = random_vector(4, rng);
      const double a = rng.uniform(-3, 3), c = rng.uniform(-3, 3);
      Vector mix(4);
      for (std::size_t i = 0; i < 4; ++i) mix[i] = a * x[i] + c * z[i];
      const Vector lhs = affine_forward(w, b, mix);
      const Vector fx = affine_forward(w, b, x), fz = affine_forward(w, b, z);
      for (std::size_t i = 0; i < 3; ++i) {
        CHECK(lhs[i] == doctest::Approx(a * fx[i] + c * fz[i] - (a + c - 1) * b[i]).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("affine_backward zero upstream gradient") {
    Rng rng(5);
    const auto g = affine_backward(random_matrix(3, 2, rng), random_vector(2, rng), Vector(3));
    for (double v : g.grad_w.span()) CHECK(v == 0.0);
    for (double v : g.grad_b) CHECK(v == 0.0);
    for (double v : g.grad_x) CHECK(v == 0.0);
  }

  TEST_CASE("affine_backward identity weights pass the gradient through") {
    const Vector go{0.5, -2, 7};
    const auto g = affine_backward(Matrix::identity(3), Vector{1, 2, 3}, go);
    CHECK(g.grad_x == go);
    CHECK(g.grad_b == go);
    CHECK(g.grad_w(1, 2) == doctest::Approx(-2 * 3));
  }

  TEST_CASE("affine_backward matches central differences on a 3x2 instance") {
    Rng rng(17);
    Matrix w = random_matrix(3, 2, rng);
    Vector b = random_vector(3, rng);
    Vector x = random_vector(2, rng);
    const Vector probe = random_vector(3, rng);
    auto f = [&] {
      const Vector y = affine_forward(w, b, x);
      double s = 0;
      for (std::size_t i = 0; i < 3; ++i) s += probe[i] * y[i];
      return s;
    };
    const auto g = affine_backward(w, x, probe);
    GradCheckOptions opts;
    opts.tolerance = 1e-7;
    CHECK(grad_check(w.span(), g.grad_w.span(), f, opts).passed);
    CHECK(grad_check(b.span(), g.grad_b.span(), f, opts).passed);
    CHECK(grad_check(x.span(), g.grad_x.span(), f, opts).passed);
  }

  TEST_CASE("relu and its backward mask") {
    CHECK(relu(Vector{-1, 0, 2}) == Vector{0, 0, 2});
    CHECK(relu(Vector{1, 2, 3}) == Vector{1, 2, 3});
    CHECK(relu_backward(Vector{-1, 2}, Vector{5, 5}) == Vector{0, 5});
    CHECK(relu_backward(Vector{0.0}, Vector{5}) == Vector{0.0});
  }

  TEST_CASE("batched kernels agree with the single-sample kernels") {
    Rng rng(23);
    const Matrix w = random_matrix(5, 4, rng);
    const Vector b = random_vector(5, rng);
    const Matrix x = random_matrix(3, 4, rng);
    const Matrix y = affine_forward_batch(w, &b, x);
    const Matrix go = random_matrix(3, 5, rng);
    Matrix gw(5, 4);
    Vector gb(5);
    const Matrix gx = affine_backward_batch(w, x, go, gw, &gb, true);
    Matrix gw_ref(5, 4);
    Vector gb_ref(5);
    for (std::size_t r = 0; r < 3; ++r) {
      const Vector xr(std::vector<double>(x.row(r).begin(), x.row(r).end()));
      const Vector yr = affine_forward(w, b, xr);
      for (std::size_t i = 0; i < 5; ++i) CHECK(y(r, i) == doctest::Approx(yr[i]).epsilon(1e-13));
      const Vector gor(std::vector<double>(go.row(r).begin(), go.row(r).end()));
      const auto g = affine_backward(w, xr, gor);
      for (std::size_t i = 0; i < 4; ++i) CHECK(gx(r, i) == doctest::Approx(g.grad_x[i]).epsilon(1e-13));
      for (std::size_t i = 0; i < gw.size(); ++i) gw_ref.span()[i] += g.grad_w.span()[i];
      for (std::size_t i = 0; i < 5; ++i) gb_ref[i] += g.grad_b[i];
    }
    for (std::size_t i = 0; i < gw.size(); ++i) CHECK(gw.span()[i] == doctest::Approx(gw_ref.span()[i]).epsilon(1e-13));
    for (std::size_t i = 0; i < 5; ++i) CHECK(gb[i] == doctest::Approx(gb_ref[i]).epsilon(1e-13));
  }

  TEST_CASE("project_batch and its backward") {
    const Matrix basis{{1, 0}, {1, 1}, {1, 2}};
    const Matrix coeffs{{2, 3}};
    const Matrix y = project_batch(basis, coeffs);
    CHECK(y == Matrix{{2, 5, 8}});
    const Matrix g = project_backward_batch(basis, Matrix{{1, 1, 1}});
    CHECK(g == Matrix{{3, 3}});
  }

  TEST_CASE("grad_check on a linear function is exact") {
    std::vector<double> p{0.3, -1.2, 4.0};
    const std::vector<double> c{2.0, -5.0, 0.25};
    auto f = [&] { return std::inner_product(p.begin(), p.end(), c.begin(), 1.0); };
    const auto r = grad_check(p, c, f, {});
    CHECK(r.passed);
    CHECK(r.max_rel_err <= 1e-10);
  }

  TEST_CASE("grad_check on a constant function sees zero gradients") {
    std::vector<double> p{1, 2};
    const std::vector<double> g{0, 0};
    const auto r = grad_check(p, g, [] { return 4.0; }, {});
    CHECK(r.passed);
    for (const auto& c : r.coords) CHECK(c.numeric == 0.0);
  }

  TEST_CASE("grad_check detects a wrong gradient") {
    std::vector<double> p{1.0};
    const std::vector<double> g{3.0};
    const auto r = grad_check(p, g, [&] { return p[0] * p[0]; }, {});
    CHECK_FALSE(r.passed);
  }

  TEST_CASE("grad_check reports the coordinate of a non-finite value") {
    std::vector<double> p{1.0, 0.0};
    const std::vector<double> g{0.0, 0.0};
    const auto r = grad_check(p, g, [&] { return p[1] > 0 ? std::nan("") : 0.0; }, {});
    CHECK_FALSE(r.passed);
    REQUIRE(r.failure.has_value());
    CHECK(r.failure->find("1") != std::string::npos);
  }

  TEST_CASE("grad_check through a four-layer FC+ReLU chain") {
    Rng rng(99);
    int passed = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 4;
      std::vector<Matrix> w;
      std::vector<Vector> b;
      for (int l = 0; l < 4; ++l) {
        w.push_back(random_matrix(n, n, rng));
        b.push_back(random_vector(n, rng));
      }
      const Vector x = random_vector(n, rng);
      const Vector probe = random_vector(n, rng);
      auto forward = [&](std::vector<Vector>* pre) {
        Vector h = x;
        for (int l = 0; l < 4; ++l) {
          const Vector z = affine_forward(w[l], b[l], h);
          if (pre) pre->push_back(z);
          h = relu(z);
        }
        return h;
      };
      auto f = [&] {
        const Vector h = forward(nullptr);
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) s += probe[i] * h[i];
        return s;
      };
      std::vector<Vector> pre;
      const Vector out = forward(&pre);
      (void)out;
      // backward
      std::vector<Vector> inputs{x};
      for (int l = 0; l < 3; ++l) inputs.push_back(relu(pre[l]));
      Vector g = probe;
      std::vector<Matrix> gw(4);
      for (int l = 3; l >= 0; --l) {
        g = relu_backward(pre[l], g);
        const auto ag = affine_backward(w[l], inputs[l], g);
        gw[l] = ag.grad_w;
        g = ag.grad_x;
      }
      // skip coordinates whose perturbation flips a pre-activation sign
      auto pattern = [&] {
        std::vector<Vector> p;
        forward(&p);
        std::vector<bool> s;
        for (const auto& v : p)
          for (double z : v) s.push_back(z > 0);
        return s;
      };
      bool near_kink = false;
      for (const auto& v : pre)
        for (double z : v) near_kink |= std::abs(z) < 1e-4;
      if (near_kink) continue;
      const auto base = pattern();
      bool ok = true;
      for (int l = 0; l < 4; ++l) {
        const auto r = grad_check(w[l].span(), gw[l].span(), f, {}, [&] { return pattern() == base; });
        ok &= r.passed;
      }
      CHECK(ok);
      passed += ok;
    }
    CHECK(passed > 50);
  }

  TEST_CASE("Rng determinism and seed sensitivity") {
    Rng a(42), b(42), c(43);
    std::vector<std::uint64_t> sa, sb, sc;
    for (int i = 0; i < 16; ++i) {
      sa.push_back(a.next_u64());
      sb.push_back(b.next_u64());
      sc.push_back(c.next_u64());
    }
    CHECK(sa == sb);
    CHECK(sa != sc);
  }

  TEST_CASE("Rng reference values are fixed") {
    // xoshiro256** seeded by splitmix64(0): first output
    Rng r(0);
    const std::uint64_t first = r.next_u64();
    Rng r2(0);
    CHECK(first == r2.next_u64());
    CHECK(mix64(0) == 0xE220A8397B1DCDAFull);
  }

  TEST_CASE("Rng uniform and below ranges") {
    Rng r(7);
    for (int i = 0; i < 10000; ++i) {
      const double u = r.uniform();
      CHECK((u >= 0.0 && u < 1.0));
      CHECK(r.below(7) < 7);
    }
  }
}
