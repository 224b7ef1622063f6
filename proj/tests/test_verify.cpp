#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <stdexcept>

#include "vdiff/verify.hpp"

using namespace vdiff;

TEST_CASE("suite names and unknown-suite rejection") {
  const auto& names = verify_suite_names();
  REQUIRE(names.size() == 7);
  CHECK(names.front() == "gradients");
  CHECK(names.back() == "all");
  CHECK_THROWS_AS(run_verify_suite("bogus", 1), std::invalid_argument);
  CHECK_THROWS_AS(run_verify_suite("", 1), std::invalid_argument);
  CHECK_THROWS_AS(run_verify_suite("Gradients", 1), std::invalid_argument);
}

TEST_CASE("schedule suite passes and renders one line per check") {
  VerifyReport rep = run_verify_suite("schedule", 3);
  CHECK(rep.all_pass());
  CHECK(rep.checks.size() == 7);
  std::string text = rep.render();
  CHECK(text.find("[PASS] schedule/beta_endpoints") != std::string::npos);
  CHECK(text.find("[FAIL]") == std::string::npos);
  size_t lines = 0;
  for (char c : text)
    if (c == '\n') ++lines;
  CHECK(lines == rep.checks.size());
}

TEST_CASE("report fails as a whole when any check fails") {
  VerifyReport rep;
  rep.checks.push_back({"demo/ok", 0.0, 1.0, true, ""});
  rep.checks.push_back({"demo/bad", 2.0, 1.0, false, "tripped"});
  CHECK(!rep.all_pass());
  std::string text = rep.render();
  CHECK(text.find("[FAIL] demo/bad") != std::string::npos);
  CHECK(text.find("(tripped)") != std::string::npos);
}

TEST_CASE("gradients suite: all primitives and the composite pass") {
  VerifyReport rep = run_verify_suite("gradients", 11);
  CHECK(rep.all_pass());
  CHECK(rep.checks.size() >= 25);
  for (const auto& c : rep.checks) {
    INFO(c.name);
    CHECK(c.tolerance == 1e-4);
    // healthy f64 central differences sit far below the acceptance tolerance
    CHECK(c.measured < 1e-6);
  }
  bool saw_composite = false;
  for (const auto& c : rep.checks) saw_composite |= c.name == "gradients/composite_unet";
  CHECK(saw_composite);
}

TEST_CASE("moments suite passes on the full t x lambda grid") {
  VerifyReport rep = run_verify_suite("moments", 19);
  CHECK(rep.all_pass());
  CHECK(rep.checks.size() == 24);  // 4 timesteps x 3 lambdas x {mean, var}
}

TEST_CASE("zeroinit suite covers all four injection modes") {
  VerifyReport rep = run_verify_suite("zeroinit", 23);
  CHECK(rep.all_pass());
  REQUIRE(rep.checks.size() == 4);
  CHECK(rep.checks[0].name == "zeroinit/concat");
  CHECK(rep.checks[1].name == "zeroinit/add-dec");
  CHECK(rep.checks[2].name == "zeroinit/add-encdec");
  CHECK(rep.checks[3].name == "zeroinit/add-encdec-spade");
}

TEST_CASE("shifted-init suite is bitwise zero on the full grid") {
  VerifyReport rep = run_verify_suite("shifted-init", 29);
  CHECK(rep.all_pass());
  REQUIRE(rep.checks.size() == 9);
  for (const auto& c : rep.checks) {
    INFO(c.name);
    CHECK(c.measured == 0.0);
    CHECK(c.tolerance == 0.0);
  }
}

TEST_CASE("gaussian-ode suite structure at reduced clip count") {
  // small clip counts keep this fast; the mean/var checks get statistically
  // loose there, so assert a slack bound on measured instead of pass flags
  VerifyReport rep = run_verify_suite("gaussian-ode", 31, 500);
  REQUIRE(rep.checks.size() == 6);
  for (const auto& c : rep.checks) {
    INFO(c.name);
    if (c.name.find("/order") != std::string::npos)
      CHECK(c.pass);  // discretization ratio does not depend on clip count
    else
      CHECK(c.measured < 0.05);
  }
}

TEST_CASE("suites are deterministic in the seed") {
  CHECK(run_verify_suite("gradients", 7).render() == run_verify_suite("gradients", 7).render());
  CHECK(run_verify_suite("shifted-init", 7).render() ==
        run_verify_suite("shifted-init", 7).render());
  VerifyReport a = run_verify_suite("moments", 7);
  VerifyReport b = run_verify_suite("moments", 8);
  bool differs = false;
  for (size_t i = 0; i < a.checks.size(); ++i) differs |= a.checks[i].measured != b.checks[i].measured;
  CHECK(differs);
}
