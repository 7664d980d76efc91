#include "plunder/dimension.hpp"

namespace plunder {

std::string Dimension::to_string() const {
  if (dimensionless()) return "1";
  auto term = [](const char* base, int e) {
    std::string s = base;
    if (e != 1) s += "^" + std::to_string(e);
    return s;
  };
  std::string num;
  std::string den;
  if (length > 0) num = term("m", length);
  if (time > 0) num += (num.empty() ? "" : "*") + term("s", time);
  if (length < 0) den = term("m", -length);
  if (time < 0) den += (den.empty() ? "" : "*") + term("s", -time);
  if (num.empty()) num = "1";
  return den.empty() ? num : num + "/" + den;
}

}  // namespace plunder
