#include <catch_amalgamated.hpp>

#include "xy/gradcheck.hpp"

using namespace xy;

TEST_CASE("finite differences confirm every op and loss gradient") {
    const auto results = run_gradcheck(42);
    REQUIRE(results.size() >= 30);
    for (const auto& r : results) {
        INFO(r.name << ": err " << r.err << " tol " << r.tol);
        CHECK(r.err < r.tol);
    }
}

TEST_CASE("finite differences confirm the full pretraining objective") {
    const auto r = gradcheck_pretrain_graph(43, 8);
    INFO(r.name << ": err " << r.err << " tol " << r.tol);
    CHECK(r.err < r.tol);
    CHECK(r.err > 0);
}
