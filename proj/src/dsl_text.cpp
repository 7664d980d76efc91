#include <cctype>
#include <charconv>
#include <cmath>
#include <system_error>

#include "plunder/dsl.hpp"

namespace plunder {

ParseError::ParseError(const std::string& message, std::size_t l, std::size_t c)
    : Error(std::to_string(l) + ":" + std::to_string(c) + ": " + message), line(l), column(c) {}

std::string format_number(double v) {
  if (v == 0.0) return "0";  // also folds -0
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

bool is_additive(const Feature& f) {
  return f.kind == Feature::Kind::Apply && f.args.size() == 2 && (f.name == "+" || f.name == "-");
}

}  // namespace

std::string to_string(const Feature& f) {
  switch (f.kind) {
    case Feature::Kind::Var:
      return f.name;
    case Feature::Kind::Const:
      return format_number(f.value);
    case Feature::Kind::Apply:
      break;
  }
  if (is_additive(f)) {
    std::string rhs = to_string(f.args[1]);
    if (is_additive(f.args[1])) rhs = "(" + rhs + ")";
    return to_string(f.args[0]) + " " + f.name + " " + rhs;
  }
  std::string out = f.name + "(";
  for (std::size_t i = 0; i < f.args.size(); ++i) {
    if (i) out += ", ";
    out += to_string(f.args[i]);
  }
  return out + ")";
}

std::string to_string(const ProbExpr& p) {
  if (p.kind == ProbExpr::Kind::Constant) return format_number(p.r);
  return "lgs(" + to_string(p.feature) + ", " + format_number(p.x0) + ", " + format_number(p.k) + ")";
}

std::string to_string(const Guard& g) {
  if (g.kind == Guard::Kind::Flip) return "flp(" + to_string(g.prob) + ")";
  const bool is_and = g.kind == Guard::Kind::And;
  auto operand = [&](const Guard& c, bool right) {
    std::string s = to_string(c);
    // || inside && needs grouping; a right operand of the same connective
    // is grouped so the tree shape survives a round trip.
    const bool group = (is_and && c.kind == Guard::Kind::Or) || (right && c.kind == g.kind);
    return group ? "(" + s + ")" : s;
  };
  return operand(g.children[0], false) + (is_and ? " && " : " || ") + operand(g.children[1], true);
}

std::string to_string(const Rule& r, const Domain& domain) {
  return "if (" + to_string(r.guard) + " and a == " + domain.actions.name(r.from) + ") then " +
         domain.actions.name(r.to);
}

std::string serialize_policy(const Policy& pi, const Domain& domain) {
  std::string out;
  for (const auto& r : pi.rules) out += to_string(r, domain) + "\n";
  return out;
}

// --- parser -----------------------------------------------------------------

namespace {

enum class Tok { Ident, Number, LParen, RParen, Comma, Plus, Minus, AndAnd, OrOr, EqEq, End };

struct Token {
  Tok kind;
  std::string text;
  std::size_t line;
  std::size_t column;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_space();
      const std::size_t l = line_, c = col_;
      if (pos_ >= src_.size()) {
        out.push_back({Tok::End, "", l, c});
        return out;
      }
      const char ch = src_[pos_];
      if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') {
        std::size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
          advance();
        out.push_back({Tok::Ident, std::string(src_.substr(start, pos_ - start)), l, c});
      } else if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '.') {
        out.push_back({Tok::Number, number(), l, c});
      } else {
        auto two = src_.substr(pos_, 2);
        if (two == "&&") {
          out.push_back({Tok::AndAnd, "&&", l, c});
          advance(2);
        } else if (two == "||") {
          out.push_back({Tok::OrOr, "||", l, c});
          advance(2);
        } else if (two == "==") {
          out.push_back({Tok::EqEq, "==", l, c});
          advance(2);
        } else {
          Tok k;
          switch (ch) {
            case '(': k = Tok::LParen; break;
            case ')': k = Tok::RParen; break;
            case ',': k = Tok::Comma; break;
            case '+': k = Tok::Plus; break;
            case '-': k = Tok::Minus; break;
            default:
              throw ParseError(std::string("unexpected character '") + ch + "'", l, c);
          }
          out.push_back({k, std::string(1, ch), l, c});
          advance();
        }
      }
    }
  }

 private:
  void advance(std::size_t n = 1) {
    for (std::size_t i = 0; i < n; ++i, ++pos_) {
      if (src_[pos_] == '\n') {
        ++line_;
        col_ = 1;
      } else {
        ++col_;
      }
    }
  }

  void skip_space() {
    while (pos_ < src_.size()) {
      if (std::isspace(static_cast<unsigned char>(src_[pos_]))) {
        advance();
      } else if (src_[pos_] == '#') {  // comment to end of line
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else {
        break;
      }
    }
  }

  std::string number() {
    std::size_t start = pos_;
    auto digits = [&] {
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
    };
    digits();
    if (pos_ < src_.size() && src_[pos_] == '.') {
      advance();
      digits();
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      advance();
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) advance();
      digits();
    }
    return std::string(src_.substr(start, pos_ - start));
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

class Parser {
 public:
  Parser(std::vector<Token> toks, const Domain* domain) : toks_(std::move(toks)), domain_(domain) {}

  Policy policy() {
    Policy pi;
    while (peek().kind != Tok::End) pi.rules.push_back(rule());
    return pi;
  }

  Feature standalone_feature() {
    Feature f = feature();
    expect(Tok::End, "end of input");
    return f;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& next() { return toks_[pos_++]; }

  [[noreturn]] void fail(const std::string& what, const Token& t) const {
    throw ParseError("expected " + what + ", found '" + (t.kind == Tok::End ? "end of input" : t.text) + "'",
                     t.line, t.column);
  }

  const Token& expect(Tok k, const std::string& what) {
    if (peek().kind != k) fail(what, peek());
    return next();
  }

  void keyword(std::string_view kw) {
    if (peek().kind != Tok::Ident || peek().text != kw) fail("'" + std::string(kw) + "'", peek());
    next();
  }

  ActionId action() {
    const Token& t = expect(Tok::Ident, "action label");
    auto a = domain_->actions.find(t.text);
    if (!a) throw ParseError("unknown action label '" + t.text + "'", t.line, t.column);
    return *a;
  }

  Rule rule() {
    Rule r;
    keyword("if");
    expect(Tok::LParen, "'('");
    r.guard = guard();
    keyword("and");
    keyword("a");
    expect(Tok::EqEq, "'=='");
    r.from = action();
    expect(Tok::RParen, "')'");
    keyword("then");
    r.to = action();
    return r;
  }

  Guard guard() {
    Guard g = term();
    while (peek().kind == Tok::OrOr) {
      next();
      g = Guard::disj(std::move(g), term());
    }
    return g;
  }

  Guard term() {
    Guard g = atom();
    while (peek().kind == Tok::AndAnd) {
      next();
      g = Guard::conj(std::move(g), atom());
    }
    return g;
  }

  Guard atom() {
    if (peek().kind == Tok::LParen) {
      next();
      Guard g = guard();
      expect(Tok::RParen, "')'");
      return g;
    }
    keyword("flp");
    expect(Tok::LParen, "'('");
    ProbExpr p = prob();
    expect(Tok::RParen, "')'");
    return Guard::flip(std::move(p));
  }

  ProbExpr prob() {
    if (peek().kind == Tok::Ident && peek().text == "lgs") {
      next();
      expect(Tok::LParen, "'('");
      Feature f = feature();
      expect(Tok::Comma, "','");
      const double x0 = signed_number();
      expect(Tok::Comma, "','");
      const double k = signed_number();
      expect(Tok::RParen, "')'");
      return ProbExpr::logistic(std::move(f), x0, k);
    }
    const Token& at = peek();
    const double r = signed_number();
    if (!(r >= 0.0 && r <= 1.0)) throw ParseError("probability outside [0,1]", at.line, at.column);
    return ProbExpr::constant(r);
  }

  double signed_number() {
    bool neg = false;
    if (peek().kind == Tok::Minus) {
      next();
      neg = true;
    }
    const Token& t = expect(Tok::Number, "number");
    double v = 0.0;
    auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (res.ec != std::errc() || res.ptr != t.text.data() + t.text.size())
      throw ParseError("malformed number '" + t.text + "'", t.line, t.column);
    return neg ? -v : v;
  }

  Feature feature() {
    Feature f = primary();
    while (peek().kind == Tok::Plus || peek().kind == Tok::Minus) {
      const std::string op = next().text;
      f = Feature::apply(op, {std::move(f), primary()});
    }
    return f;
  }

  Feature primary() {
    const Token& t = peek();
    if (t.kind == Tok::Number || t.kind == Tok::Minus) return Feature::constant(signed_number());
    if (t.kind == Tok::LParen) {
      next();
      Feature f = feature();
      expect(Tok::RParen, "')'");
      return f;
    }
    const Token& id = expect(Tok::Ident, "feature");
    if (peek().kind != Tok::LParen) return Feature::var(id.text);
    next();
    std::vector<Feature> args;
    args.push_back(feature());
    while (peek().kind == Tok::Comma) {
      next();
      args.push_back(feature());
    }
    expect(Tok::RParen, "')'");
    return Feature::apply(id.text, std::move(args));
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  const Domain* domain_;
};

}  // namespace

Policy parse_policy(std::string_view text, const Domain& domain) {
  Parser p(Lexer(text).run(), &domain);
  Policy pi = p.policy();
  check_policy(pi, domain);
  return pi;
}

Feature parse_feature(std::string_view text) {
  Parser p(Lexer(text).run(), nullptr);
  return p.standalone_feature();
}

}  // namespace plunder
