#pragma once

// Teacher-output fixtures shared by the unit suite and the acceptance run.

#include <optional>
#include <string>
#include <vector>

#include "mathforge/teacher.hpp"

namespace fixtures {

using mathforge::prompts::Setting;
using mathforge::teacher::ParseErrorKind;

struct Good {
  std::string name;
  std::string text;
  Setting setting;
  std::string problem;
  std::string solution;  // empty: not checked
  std::size_t blocks = 0;
  std::optional<std::string> first_output;
};

struct Bad {
  std::string name;
  std::string text;
  Setting setting;
  ParseErrorKind kind;
};

// Verbatim from the published sample outputs (tool manipulation, grade school).
inline const std::string kGoodCase4 = R"(\texttt{Question:} In a digital communication system, information is transmitted in units called bits. A crumb is defined as 2 bits, and a nibble is defined as 4 bits. If a user sends a sequence of bits, and the sequence can be broken down into whole crumbs and nibbles, how many different ways can the user send exactly 18 bits?

\texttt{Answer:}
\begin{lstlisting}[language=Python]
def count_ways_to_send_bits(total_bits):
    ways = 0
    for crumb in range(total_bits // 2 + 1):
        for nibble in range(total_bits // 4 + 1):
            if crumb * 2 + nibble * 4 == total_bits:
                ways += 1
    return ways
total_bits = 18
ways_to_send = count_ways_to_send_bits(total_bits)
print(ways_to_send)
\end{lstlisting}
```output\\
5\\
```\\
There are $\boxed{5}$ different ways the user can send exactly 18 bits.)";

inline std::vector<Good> good_fixtures() {
  struct Content {
    std::string p, s;
  };
  const std::vector<Content> nl = {
      {"Tom has 3 apples and buys 4 more. How many apples does he have?", "He has 3 + 4 = 7 apples. The answer is 7."},
      {"Solve for $x$: $2x + 5 = 17$.", "Subtract 5: $2x = 12$.\nDivide by 2: $x = 6$."},
      {"A rectangle has length 8 and width 3.\nWhat is its area?", "Area = length times width = 24."},
      {"Let $f(x) = x^2 - 4x + 3$. Find the roots of $f$.", "Factor: $(x-1)(x-3) = 0$, so $x = 1$ or $x = 3$.\n\nBoth roots are real."},
  };
  const std::vector<std::pair<std::string, std::string>> styles = {
      {"[Problem]\n{P}\n\n[Solution]\n{S}\n", "bracket"},
      {"[Problem] {P} [Solution] {S}", "inline"},
      {"Problem: {P}\nSolution: {S}", "colon"},
      {"Question: {P}\nAnswer: {S}", "question-answer"},
      {"## Problem\n{P}\n\n## Solution\n{S}", "markdown-h2"},
      {"### Question:\n{P}\n### Answer:\n{S}", "markdown-h3"},
      {"**Problem:**\n{P}\n\n**Solution:**\n{S}", "bold-inner-colon"},
      {"**Problem**: {P}\n**Solution**: {S}", "bold-outer-colon"},
      {"\\texttt{Question:} {P}\n\n\\texttt{Answer:} {S}", "texttt"},
      {"[Question]\n{P}\n[/Question]\n[Answer]\n{S}\n[/Answer]\nThanks!", "closing-tags"},
      {"Here is a new problem.\n\n[PROBLEM]\n{P}\n\n[SOLUTION]\n{S}", "preamble-uppercase"},
      {"  [Problem]\n  {P}\n  [Solution]\n  {S}\n\n[Problem] second ignored [Solution] ignored", "first-pair-wins"},
  };
  auto fill = [](std::string tmpl, const Content& c) {
    auto put = [&](const std::string& key, const std::string& value) {
      const auto pos = tmpl.find(key);
      tmpl.replace(pos, key.size(), value);
    };
    put("{P}", c.p);
    put("{S}", c.s);
    return tmpl;
  };
  std::vector<Good> out;
  for (const auto& [tmpl, style] : styles) {
    for (std::size_t i = 0; i < nl.size(); ++i) {
      out.push_back({style + "/" + std::to_string(i), fill(tmpl, nl[i]), Setting::natural_language_reasoning, nl[i].p,
                     nl[i].s});
    }
  }

  const std::string code = "x = 3 + 4\nprint(x)";
  out.push_back({"tm/fenced-with-output",
                 "[Problem Description]\nAdd 3 and 4.\n[/Problem Description]\n\n[Solution]\n```python\n" + code +
                     "\n```\n```output\n7\n```\nThe answer is 7.\n[/Solution]\n",
                 Setting::tool_manipulation, "Add 3 and 4.", "", 1, "7"});
  out.push_back({"tm/fenced-no-output", "[Problem Description] Print seven. [Solution]\n```python\nprint(7)\n```\n",
                 Setting::tool_manipulation, "Print seven.", "", 1, std::nullopt});
  out.push_back({"tm/two-blocks",
                 "[Problem Description]\nTwo steps.\n\n[Solution]\nFirst:\n```python\na = 2\nprint(a)\n```\n```output\n2\n```\n"
                 "Then:\n```py\nprint(2 * 2)\n```\n```output\n4\n```\n",
                 Setting::tool_manipulation, "Two steps.", "", 2, "2"});
  out.push_back({"tm/lstlisting",
                 "Question: What is 10 factorial?\nAnswer:\n\\begin{lstlisting}[language=Python]\nimport math\nprint(math.factorial(10))\n"
                 "\\end{lstlisting}\n```output\n3628800\n```\n",
                 Setting::tool_manipulation, "What is 10 factorial?", "", 1, "3628800"});
  out.push_back({"tm/bare-fence",
                 "[Problem Description]\nSquare 9.\n[Solution]\n```\nprint(9 ** 2)\n```\n```output\n81\n```",
                 Setting::tool_manipulation, "Square 9.", "", 1, "81"});
  out.push_back({"tm/indented-fence",
                 "## Problem\nHalf of 10?\n\n## Solution\n   ```python\n   print(10 // 2)\n   ```\n   ```output\n   5\n   ```\n",
                 Setting::tool_manipulation, "Half of 10?", "", 1, "5"});
  out.push_back({"tm/good-case-4", kGoodCase4, Setting::tool_manipulation,
                 "In a digital communication system, information is transmitted in units called bits. A crumb is defined "
                 "as 2 bits, and a nibble is defined as 4 bits. If a user sends a sequence of bits, and the sequence can "
                 "be broken down into whole crumbs and nibbles, how many different ways can the user send exactly 18 bits?",
                 "", 1, "5"});
  return out;
}

inline std::vector<Bad> bad_fixtures() {
  const auto N = Setting::natural_language_reasoning;
  const auto T = Setting::tool_manipulation;
  return {
      {"empty", "", N, ParseErrorKind::missing_problem},
      {"prose", "Here is some text without any sections.", N, ParseErrorKind::missing_problem},
      {"solution-only", "[Solution] S", N, ParseErrorKind::missing_problem},
      {"answer-only", "Answer: 5", N, ParseErrorKind::missing_problem},
      {"problem-only", "[Problem] P", N, ParseErrorKind::missing_solution},
      {"colon-problem-only", "Problem: what is 2+2?", N, ParseErrorKind::missing_solution},
      {"closed-problem-only", "[Problem]P[/Problem]", N, ParseErrorKind::missing_solution},
      {"reversed", "[Solution] S [Problem] P", N, ParseErrorKind::missing_solution},
      {"empty-problem", "[Problem]\n\n[Solution] S", N, ParseErrorKind::empty_problem},
      {"empty-solution", "[Problem] P [Solution]   \n", N, ParseErrorKind::empty_solution},
      {"plural-headers", "Problems: x\nSolutions: y", N, ParseErrorKind::missing_problem},
      {"single-hash", "# Problem\nP\n# Solution\nS", N, ParseErrorKind::missing_problem},
      {"no-colon", "Problem P\nSolution S", N, ParseErrorKind::missing_problem},
      {"unclosed-bracket", "[Problem\nP\n[Solution\nS", N, ParseErrorKind::missing_problem},
      {"unclosed-texttt", "\\texttt{Question: P\n\\texttt{Answer: S", N, ParseErrorKind::missing_problem},
      {"heading-with-text", "## Problem statement\nP\n## Solution\nS", N, ParseErrorKind::missing_problem},
      {"tm-prose-solution", "[Problem Description] P [Solution] Just reason it out: 5.", T, ParseErrorKind::no_code_block},
      {"tm-inline-fence", "[Problem Description] P [Solution] ```python print(1)```", T, ParseErrorKind::malformed_block},
      {"tm-output-only", "[Problem Description] P\n[Solution]\n```output\n5\n```\n", T, ParseErrorKind::no_code_block},
      {"tm-unterminated-fence", "[Problem Description] P\n[Solution]\n```python\nprint(1)\n", T,
       ParseErrorKind::malformed_block},
      {"tm-unterminated-listing", "Question: P\nAnswer:\n\\begin{lstlisting}\nprint(1)\n", T,
       ParseErrorKind::malformed_block},
      {"tm-unterminated-output", "[Problem Description] P\n[Solution]\n```python\nprint(1)\n```\n```output\n1\n", T,
       ParseErrorKind::malformed_block},
      {"tm-no-solution", "[Problem Description] P\n```python\nprint(1)\n```", T, ParseErrorKind::missing_solution},
      {"tm-empty-problem", "[Problem Description]\n\n[Solution]\n```python\nprint(1)\n```", T,
       ParseErrorKind::empty_problem},
      {"tm-no-markers", "```python\nprint(1)\n```", T, ParseErrorKind::missing_problem},
  };
}

}  // namespace fixtures
