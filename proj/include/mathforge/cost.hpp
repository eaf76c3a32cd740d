#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mathforge/core/error.hpp"
#include "mathforge/core/fs.hpp"
#include "mathforge/core/jsonl.hpp"

namespace mathforge::cost {

/// Exact base-10 fixed point: value = mantissa * 10^-scale. Addition and
/// multiplication are exact; there is no division.
class Decimal {
 public:
  constexpr Decimal() = default;
  constexpr Decimal(std::int64_t whole) : mantissa_(whole), scale_(0) {}  // NOLINT(implicit)

  static Decimal parse(std::string_view s) {
    Decimal d;
    bool neg = false;
    std::size_t i = 0;
    if (i < s.size() && (s[i] == '-' || s[i] == '+')) neg = s[i++] == '-';
    bool digits = false, dot = false;
    for (; i < s.size(); ++i) {
      const char c = s[i];
      if (c == '.' && !dot) {
        dot = true;
      } else if (c == '_' || c == ',') {
        continue;  // digit-group separators
      } else if (c >= '0' && c <= '9') {
        d.mantissa_ = d.mantissa_ * 10 + (c - '0');
        if (dot) ++d.scale_;
        digits = true;
        if (d.mantissa_ > kLimit) throw InvalidArgument("decimal out of range: " + std::string(s));
      } else {
        throw InvalidArgument("not a decimal number: '" + std::string(s) + "'");
      }
    }
    if (!digits) throw InvalidArgument("not a decimal number: '" + std::string(s) + "'");
    if (neg) d.mantissa_ = -d.mantissa_;
    return d.reduced();
  }

  /// Multiply by 10^-digits.
  Decimal shifted(int digits) const {
    Decimal d = *this;
    d.scale_ += digits;
    return d.reduced();
  }

  friend Decimal operator+(Decimal a, Decimal b) {
    align(a, b);
    Decimal d;
    d.mantissa_ = a.mantissa_ + b.mantissa_;
    d.scale_ = a.scale_;
    return d.reduced();
  }

  friend Decimal operator*(const Decimal& a, const Decimal& b) {
    Decimal d;
    d.mantissa_ = a.mantissa_ * b.mantissa_;
    d.scale_ = a.scale_ + b.scale_;
    if (d.mantissa_ > kLimit || d.mantissa_ < -kLimit) throw Error("decimal overflow");
    return d.reduced();
  }

  friend bool operator==(Decimal a, Decimal b) {
    align(a, b);
    return a.mantissa_ == b.mantissa_;
  }

  friend bool operator<(Decimal a, Decimal b) {
    align(a, b);
    return a.mantissa_ < b.mantissa_;
  }

  bool negative() const { return mantissa_ < 0; }

  /// Integer part, truncated toward zero.
  std::int64_t truncated() const {
    __int128 m = mantissa_;
    for (int i = 0; i < scale_; ++i) m /= 10;
    return static_cast<std::int64_t>(m);
  }

  /// Exact decimal text; at least `min_frac` fractional digits.
  std::string str(int min_frac = 0) const {
    __int128 m = mantissa_ < 0 ? -mantissa_ : mantissa_;
    int scale = scale_;
    while (scale < min_frac) {
      m *= 10;
      ++scale;
    }
    std::string digits;
    do {
      digits.insert(digits.begin(), static_cast<char>('0' + static_cast<int>(m % 10)));
      m /= 10;
    } while (m > 0);
    while (static_cast<int>(digits.size()) <= scale) digits.insert(digits.begin(), '0');
    std::string out = mantissa_ < 0 ? "-" : "";
    out += digits.substr(0, digits.size() - static_cast<std::size_t>(scale));
    if (scale > 0) out += "." + digits.substr(digits.size() - static_cast<std::size_t>(scale));
    return out;
  }

 private:
  static constexpr __int128 kLimit = static_cast<__int128>(1) << 120;

  static void align(Decimal& a, Decimal& b) {
    while (a.scale_ < b.scale_) a.mantissa_ *= 10, ++a.scale_;
    while (b.scale_ < a.scale_) b.mantissa_ *= 10, ++b.scale_;
  }

  Decimal reduced() const {
    Decimal d = *this;
    while (d.scale_ < 0) d.mantissa_ *= 10, ++d.scale_;
    while (d.scale_ > 0 && d.mantissa_ % 10 == 0) d.mantissa_ /= 10, --d.scale_;
    return d;
  }

  __int128 mantissa_ = 0;
  int scale_ = 0;
};

/// Whole-USD figure with thousands separators, e.g. "39,599".
inline std::string format_usd(std::int64_t usd) {
  std::string digits = std::to_string(usd < 0 ? -usd : usd);
  for (int i = static_cast<int>(digits.size()) - 3; i > 0; i -= 3) digits.insert(static_cast<std::size_t>(i), ",");
  return (usd < 0 ? "-" : "") + digits + " USD";
}

struct PriceSheet {
  Decimal api_input_price = Decimal::parse("30.00");   // USD per 1M input tokens
  Decimal api_output_price = Decimal::parse("60.00");  // USD per 1M output tokens
  Decimal server_price = Decimal::parse("40.96");      // USD per node-hour (8 x A100)
  Decimal nodes = 8;
};

struct RunProfile {
  std::string name;
  Decimal avg_input_tokens;
  Decimal avg_output_tokens;
  Decimal num_calls;
  Decimal synth_hours;
  Decimal train_hours;
};

inline void validate(const PriceSheet& p) {
  for (const Decimal* d : {&p.api_input_price, &p.api_output_price, &p.server_price, &p.nodes}) {
    if (!(Decimal(0) < *d)) throw InvalidArgument("price sheet entries must be positive");
  }
}

inline void validate(const RunProfile& r) {
  for (const Decimal* d : {&r.avg_input_tokens, &r.avg_output_tokens, &r.num_calls, &r.synth_hours, &r.train_hours}) {
    if (d->negative()) throw InvalidArgument("run profile '" + r.name + "': fields must be nonnegative");
  }
}

/// (avg_in * in_price + avg_out * out_price) / 1M * calls
inline Decimal api_cost(const RunProfile& r, const PriceSheet& p) {
  validate(r);
  return ((r.avg_input_tokens * p.api_input_price + r.avg_output_tokens * p.api_output_price) * r.num_calls).shifted(6);
}

/// nodes * price per node-hour * (synthesis + training hours)
inline Decimal server_cost(const RunProfile& r, const PriceSheet& p) {
  validate(r);
  return p.nodes * p.server_price * (r.synth_hours + r.train_hours);
}

inline Decimal total_cost(const RunProfile& r, const PriceSheet& p) { return api_cost(r, p) + server_cost(r, p); }

/// Reported totals truncate toward zero to whole USD.
inline std::int64_t reported_total(const RunProfile& r, const PriceSheet& p) { return total_cost(r, p).truncated(); }

inline RunProfile make_profile(std::string name, std::string_view in, std::string_view out, std::string_view calls,
                               std::string_view synth_h, std::string_view train_h) {
  return RunProfile{std::move(name), Decimal::parse(in), Decimal::parse(out), Decimal::parse(calls),
                    Decimal::parse(synth_h), Decimal::parse(train_h)};
}

/// The three reference rows; dashes in the source table are zeros.
inline std::vector<RunProfile> reference_profiles() {
  return {make_profile("KPMath-DSMath-7B", "1090", "218", "865000", "0", "0"),
          make_profile("DeepSeekMath-7B-RL", "0", "0", "0", "0", "160"),
          make_profile("JiuZhang3.0-7B", "300", "877", "10000", "14", "10")};
}

namespace detail {
inline Decimal decimal_field(const json& j, const char* key, bool required = false) {
  if (!j.contains(key) || j[key].is_null()) {
    if (required) throw InvalidArgument(std::string("missing field '") + key + "'");
    return 0;
  }
  const json& v = j[key];
  if (v.is_string()) return Decimal::parse(v.get<std::string>());
  if (v.is_number()) return Decimal::parse(v.dump());
  throw InvalidArgument(std::string("field '") + key + "' must be a number");
}
}  // namespace detail

/// Profiles file: a JSON object or array of objects with fields name,
/// avg_input_tokens, avg_output_tokens, num_calls, synth_hours, train_hours.
inline std::vector<RunProfile> parse_profiles(const json& j) {
  std::vector<RunProfile> out;
  auto one = [&](const json& o) {
    RunProfile r;
    r.name = o.value("name", "profile");
    r.avg_input_tokens = detail::decimal_field(o, "avg_input_tokens");
    r.avg_output_tokens = detail::decimal_field(o, "avg_output_tokens");
    r.num_calls = detail::decimal_field(o, "num_calls");
    r.synth_hours = detail::decimal_field(o, "synth_hours");
    r.train_hours = detail::decimal_field(o, "train_hours");
    validate(r);
    out.push_back(std::move(r));
  };
  if (j.is_array()) {
    for (const auto& o : j) one(o);
  } else {
    one(j);
  }
  return out;
}

inline PriceSheet parse_price_sheet(const json& j) {
  PriceSheet p;
  if (j.contains("api_input_price")) p.api_input_price = detail::decimal_field(j, "api_input_price");
  if (j.contains("api_output_price")) p.api_output_price = detail::decimal_field(j, "api_output_price");
  if (j.contains("server_price")) p.server_price = detail::decimal_field(j, "server_price");
  if (j.contains("nodes")) p.nodes = detail::decimal_field(j, "nodes");
  validate(p);
  return p;
}

inline json profile_json(const RunProfile& r, const PriceSheet& p) {
  return json{{"name", r.name},
              {"avg_input_tokens", r.avg_input_tokens.str()},
              {"avg_output_tokens", r.avg_output_tokens.str()},
              {"num_calls", r.num_calls.str()},
              {"synth_hours", r.synth_hours.str()},
              {"train_hours", r.train_hours.str()},
              {"api_cost", api_cost(r, p).str(2)},
              {"server_cost", server_cost(r, p).str(2)},
              {"total_cost", total_cost(r, p).str(2)},
              {"reported_total_usd", reported_total(r, p)}};
}

/// Plain-text table: token and hour inputs, then the truncated total.
inline std::string report(const std::vector<RunProfile>& profiles, const PriceSheet& p) {
  std::ostringstream out;
  out << "Prices: input " << p.api_input_price.str(2) << " USD/1M tok, output " << p.api_output_price.str(2)
      << " USD/1M tok, server " << p.server_price.str(2) << " USD/node-hour, " << p.nodes.str() << " nodes\n";
  out << std::left << std::setw(22) << "Model" << std::right << std::setw(8) << "Input" << std::setw(8) << "Output"
      << std::setw(10) << "Calls" << std::setw(8) << "Synth h" << std::setw(8) << "Train h" << std::setw(16)
      << "Total" << "\n";
  auto dash = [](const Decimal& d) { return d == Decimal(0) ? std::string("-") : d.str(); };
  for (const auto& r : profiles) {
    out << std::left << std::setw(22) << r.name << std::right << std::setw(8) << dash(r.avg_input_tokens)
        << std::setw(8) << dash(r.avg_output_tokens) << std::setw(10) << dash(r.num_calls) << std::setw(8)
        << dash(r.synth_hours) << std::setw(8) << dash(r.train_hours) << std::setw(16)
        << format_usd(reported_total(r, p)) << "\n";
  }
  return out.str();
}

}  // namespace mathforge::cost
