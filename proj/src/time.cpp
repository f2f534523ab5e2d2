#include "pvf/time.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

#include "pvf/error.hpp"

namespace pvf {
namespace {

int parse_int(std::string_view text, std::size_t pos, std::size_t len, std::string_view whole) {
  int value = 0;
  if (pos + len > text.size()) throw ValidationError("truncated timestamp: " + std::string(whole));
  auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, value);
  if (ec != std::errc() || ptr != text.data() + pos + len)
    throw ValidationError("malformed timestamp: " + std::string(whole));
  return value;
}

void expect(std::string_view text, std::size_t pos, std::string_view options, std::string_view whole) {
  if (pos >= text.size() || options.find(text[pos]) == std::string_view::npos)
    throw ValidationError("malformed timestamp: " + std::string(whole));
}

}  // namespace

EpochSeconds parse_rfc3339(std::string_view text) {
  using namespace std::chrono;
  while (!text.empty() && (text.front() == ' ' || text.front() == '"')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '"' || text.back() == '\r'))
    text.remove_suffix(1);

  const int y = parse_int(text, 0, 4, text);
  expect(text, 4, "-", text);
  const int mo = parse_int(text, 5, 2, text);
  expect(text, 7, "-", text);
  const int d = parse_int(text, 8, 2, text);
  expect(text, 10, "Tt ", text);
  const int hh = parse_int(text, 11, 2, text);
  expect(text, 13, ":", text);
  const int mm = parse_int(text, 14, 2, text);
  expect(text, 16, ":", text);
  const int ss = parse_int(text, 17, 2, text);

  std::size_t pos = 19;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
  }
  int offset_seconds = 0;
  if (pos < text.size()) {
    const char z = text[pos];
    if (z == 'Z' || z == 'z') {
      ++pos;
    } else if (z == '+' || z == '-') {
      const int oh = parse_int(text, pos + 1, 2, text);
      expect(text, pos + 3, ":", text);
      const int om = parse_int(text, pos + 4, 2, text);
      offset_seconds = (z == '+' ? 1 : -1) * (oh * 3600 + om * 60);
      pos += 6;
    }
  }
  if (pos != text.size()) throw ValidationError("trailing characters in timestamp: " + std::string(text));

  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60)
    throw ValidationError("invalid calendar timestamp: " + std::string(text));
  const auto days_since_epoch = sys_days{ymd}.time_since_epoch().count();
  return static_cast<EpochSeconds>(days_since_epoch) * kSecondsPerDay + hh * 3600 + mm * 60 + ss -
         offset_seconds;
}

std::string format_rfc3339(EpochSeconds t) {
  using namespace std::chrono;
  const std::int64_t dn = day_of(t);
  const std::int64_t sec = t - dn * kSecondsPerDay;
  const year_month_day ymd{sys_days{days{dn}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(sec / 3600), static_cast<int>(sec / 60 % 60), static_cast<int>(sec % 60));
  return buf;
}

std::string format_day(std::int64_t dn) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{dn}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

}  // namespace pvf
