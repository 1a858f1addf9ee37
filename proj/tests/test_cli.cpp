#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "felab/cli.hpp"

TEST_CASE("placeholder") { CHECK(true); }
