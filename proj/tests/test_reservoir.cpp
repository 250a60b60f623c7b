#include <doctest.h>
#include "nrc/harness.hpp"
TEST_CASE("placeholder_reservoir") { CHECK(true); }
