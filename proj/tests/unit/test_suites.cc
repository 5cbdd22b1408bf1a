#include <filesystem>
#include <iostream>

#include "doctest.h"
#include "mim/suites.h"

using namespace mim;

TEST_CASE("pre-training verification suites pass on fresh models") {
  const auto scratch = std::filesystem::temp_directory_path() / "mim_test_suites";
  const auto report = run_pretraining_suites({}, scratch);
  std::cout << report.to_text(true);
  for (const auto& c : report.checks) {
    INFO(c.name << " " << c.detail);
    CHECK(c.passed);
  }
  std::filesystem::remove_all(scratch);
}

TEST_CASE("suite selection") {
  const auto report = run_pretraining_suites({"rope"}, std::filesystem::temp_directory_path());
  for (const auto& c : report.checks) CHECK(c.name.rfind("rope.", 0) == 0);
  CHECK(report.checks.size() == 2);
  CHECK_THROWS(run_pretraining_suites({"nope"}, std::filesystem::temp_directory_path()));
}

TEST_CASE("report lines carry name, status, value and threshold") {
  Report r;
  r.checks.push_back({"x.y", true, 0.5, 1.0, "<", "", 0});
  r.checks.push_back({"x.z", false, 3, 0, "==", "why", 0});
  CHECK(r.to_text() == "x.y PASS value=0.5 threshold=1 op=<\nx.z FAIL value=3 threshold=0 op=== # why\n");
  CHECK(!r.passed());
}

TEST_CASE("toy backbone gradient check") {
  const auto g = backbone_grad_check(11);
  INFO(g.worst);
  CHECK(g.passed);
  CHECK(g.checked > 1000);
}
