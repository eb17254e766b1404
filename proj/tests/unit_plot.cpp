#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>
#include <vector>

#include "safl/plot.hpp"

using namespace safl;

namespace {

std::string sample_csv() {
  return "step,rolling,loss,p_ep\n"
         "1,0,0.6931,0.5\n"
         "2,0.5,0.61,0.4996\n"
         "5,0.4,0.55,0.4984\n";
}

// Minimal well-formedness scan: every '<' has a matching '>', tags balance,
// and attribute quotes pair up. Enough to catch broken markup without an XML
// dependency.
void check_markup(const std::string& svg) {
  std::vector<std::string> stack;
  size_t i = 0;
  REQUIRE(svg.rfind("<?xml", 0) == 0);
  i = svg.find("?>");
  REQUIRE(i != std::string::npos);
  i += 2;
  while (i < svg.size()) {
    if (svg[i] == '<') {
      const size_t close = svg.find('>', i);
      REQUIRE(close != std::string::npos);
      std::string tag = svg.substr(i + 1, close - i - 1);
      REQUIRE(std::count(tag.begin(), tag.end(), '"') % 2 == 0);
      if (tag.rfind('/', 0) == 0) {
        REQUIRE(!stack.empty());
        CHECK(stack.back() == tag.substr(1));
        stack.pop_back();
      } else if (tag.back() != '/') {
        stack.push_back(tag.substr(0, tag.find_first_of(" \t")));
      }
      i = close + 1;
    } else {
      REQUIRE(svg[i] != '>');
      ++i;
    }
  }
  CHECK(stack.empty());
}

}  // namespace

TEST_CASE("parse_curve_csv reads rows and label") {
  const LearningCurve c = parse_curve_csv(sample_csv(), "run-a");
  CHECK(c.label == "run-a");
  REQUIRE(c.points.size() == 3);
  CHECK(c.points[0].step == 1);
  CHECK(c.points[0].rolling == 0.0);
  CHECK(c.points[1].loss == doctest::Approx(0.61));
  CHECK(c.points[2].step == 5);
  CHECK(c.points[2].p_ep == doctest::Approx(0.4984));
}

TEST_CASE("parse_curve_csv tolerates CRLF and trailing blank line") {
  const LearningCurve c =
      parse_curve_csv("step,rolling,loss,p_ep\r\n1,0,1,0.5\r\n2,1,0.9,0.4\r\n\n", "x");
  CHECK(c.points.size() == 2);
  CHECK(c.points[1].rolling == 1.0);
}

TEST_CASE("parse_curve_csv rejects malformed input") {
  CHECK_THROWS_AS(parse_curve_csv("", "x"), FormatError);
  CHECK_THROWS_AS(parse_curve_csv("step,rolling,loss\n", "x"), FormatError);
  CHECK_THROWS_AS(parse_curve_csv("step,rolling,loss,p_ep\n", "x"), FormatError);  // no rows
  CHECK_THROWS_AS(parse_curve_csv("step,rolling,loss,p_ep\n1,0,1\n", "x"), FormatError);
  CHECK_THROWS_AS(parse_curve_csv("step,rolling,loss,p_ep\n1,0,1,0.5,9\n", "x"), FormatError);
  CHECK_THROWS_AS(parse_curve_csv("step,rolling,loss,p_ep\nx,0,1,0.5\n", "x"), FormatError);
  CHECK_THROWS_AS(parse_curve_csv("step,rolling,loss,p_ep\n1,nan,1,0.5\n", "x"), FormatError);
  CHECK_THROWS_AS(parse_curve_csv("step,rolling,loss,p_ep\n1.5,0,1,0.5\n", "x"), FormatError);
  CHECK_THROWS_AS(parse_curve_csv("step,rolling,loss,p_ep\n-1,0,1,0.5\n", "x"), FormatError);
}

TEST_CASE("parse_curve_csv enforces strictly increasing steps") {
  CHECK_THROWS_AS(parse_curve_csv("step,rolling,loss,p_ep\n2,0,1,0.5\n2,0,1,0.5\n", "x"),
                  FormatError);
  CHECK_THROWS_AS(parse_curve_csv("step,rolling,loss,p_ep\n3,0,1,0.5\n1,0,1,0.5\n", "x"),
                  FormatError);
}

TEST_CASE("render_curves_svg draws one labeled polyline per curve") {
  const LearningCurve a = parse_curve_csv(sample_csv(), "alpha");
  LearningCurve b = a;
  b.label = "beta<&>";
  const std::string svg = render_curves_svg({a, b});

  check_markup(svg);
  size_t n = 0;
  for (size_t at = svg.find("<polyline"); at != std::string::npos;
       at = svg.find("<polyline", at + 1))
    ++n;
  CHECK(n == 2);
  CHECK(svg.find("alpha") != std::string::npos);
  CHECK(svg.find("beta&lt;&amp;&gt;") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("render_curves_svg rejects empty input") {
  CHECK_THROWS_AS(render_curves_svg({}), PreconditionError);
  CHECK_THROWS_AS(render_curves_svg({LearningCurve{"empty", {}}}), PreconditionError);
}

TEST_CASE("svg stays inside the canvas for extreme values") {
  LearningCurve c;
  c.label = "wild";
  c.points = {{0, 0.0, 9e9, 0.5}, {1000000, 1.0, 0.0, 0.01}};
  const std::string svg = render_curves_svg({c});
  check_markup(svg);
  CHECK(svg.find("1000000") != std::string::npos);  // x tick label at max step
}
