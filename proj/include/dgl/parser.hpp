#pragma once

#include <cctype>
#include <charconv>
#include <cstdio>
#include <string>
#include <vector>

#include "dgl/diagnostics.hpp"
#include "dgl/program.hpp"

namespace dgl {

namespace detail {

enum class Tok {
  Ident,     // lowercase-led identifier
  Var,       // uppercase- or underscore-led identifier
  Number,    // integer or decimal literal
  Implies,   // :-
  Annotate,  // ::
  Comma, Semicolon, Dot, LParen, RParen, LBracket, RBracket, Slash, Eq, Hash,
  End,
};

struct Token {
  Tok kind;
  std::string text;
  int line = 1, col = 1;
};

class Lexer {
public:
  explicit Lexer(const std::string& src) : src_(src) {}

  Token next() {
    skip_ws();
    Token t;
    t.line = line_;
    t.col = col_;
    if (pos_ >= src_.size()) {
      t.kind = Tok::End;
      return t;
    }
    char c = src_[pos_];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
        advance();
      t.text = src_.substr(start, pos_ - start);
      t.kind = (std::isupper(static_cast<unsigned char>(c)) || c == '_') ? Tok::Var
                                                                         : Tok::Ident;
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t start = pos_;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])))
        advance();
      // A '.' is part of the number only when a digit follows; otherwise it
      // terminates the statement.
      if (pos_ + 1 < src_.size() && src_[pos_] == '.' &&
          std::isdigit(static_cast<unsigned char>(src_[pos_ + 1]))) {
        advance();
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])))
          advance();
      }
      t.kind = Tok::Number;
      t.text = src_.substr(start, pos_ - start);
      return t;
    }
    switch (c) {
      case ':':
        if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '-') {
          advance(); advance();
          t.kind = Tok::Implies;
          return t;
        }
        if (pos_ + 1 < src_.size() && src_[pos_ + 1] == ':') {
          advance(); advance();
          t.kind = Tok::Annotate;
          return t;
        }
        break;
      case ',': advance(); t.kind = Tok::Comma; return t;
      case ';': advance(); t.kind = Tok::Semicolon; return t;
      case '.': advance(); t.kind = Tok::Dot; return t;
      case '(': advance(); t.kind = Tok::LParen; return t;
      case ')': advance(); t.kind = Tok::RParen; return t;
      case '[': advance(); t.kind = Tok::LBracket; return t;
      case ']': advance(); t.kind = Tok::RBracket; return t;
      case '/': advance(); t.kind = Tok::Slash; return t;
      case '=': advance(); t.kind = Tok::Eq; return t;
      case '#': advance(); t.kind = Tok::Hash; return t;
      default: break;
    }
    throw DglError(ErrorKind::Syntax,
                   std::string("unexpected character '") + c + "'", line_, col_);
  }

private:
  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_ws() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '%') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        return;
      }
    }
  }

  const std::string& src_;
  size_t pos_ = 0;
  int line_ = 1, col_ = 1;
};

class Parser {
public:
  explicit Parser(const std::string& src) : lexer_(src) { shift(); }

  Program parse_program() {
    Program p;
    while (cur_.kind != Tok::End) statement(p);
    return p;
  }

  Atom parse_single_atom() {
    Atom a = atom();
    expect(Tok::End, "end of input");
    return a;
  }

private:
  void shift() {
    cur_ = lookahead_valid_ ? lookahead_ : lexer_.next();
    lookahead_valid_ = false;
  }

  const Token& peek() {
    if (!lookahead_valid_) {
      lookahead_ = lexer_.next();
      lookahead_valid_ = true;
    }
    return lookahead_;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw DglError(ErrorKind::Syntax, msg + " (got '" + describe(cur_) + "')",
                   cur_.line, cur_.col);
  }

  static std::string describe(const Token& t) {
    switch (t.kind) {
      case Tok::End: return "end of input";
      case Tok::Implies: return ":-";
      case Tok::Annotate: return "::";
      case Tok::Comma: return ",";
      case Tok::Semicolon: return ";";
      case Tok::Dot: return ".";
      case Tok::LParen: return "(";
      case Tok::RParen: return ")";
      case Tok::LBracket: return "[";
      case Tok::RBracket: return "]";
      case Tok::Slash: return "/";
      case Tok::Eq: return "=";
      case Tok::Hash: return "#";
      default: return t.text;
    }
  }

  Token expect(Tok kind, const std::string& what) {
    if (cur_.kind != kind) fail("expected " + what);
    Token t = cur_;
    shift();
    return t;
  }

  bool accept(Tok kind) {
    if (cur_.kind != kind) return false;
    shift();
    return true;
  }

  double number(const Token& t) const {
    double value = 0;
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), value);
    if (ec != std::errc() || ptr != t.text.data() + t.text.size())
      throw DglError(ErrorKind::Syntax, "malformed number '" + t.text + "'", t.line, t.col);
    return value;
  }

  Term term() {
    if (cur_.kind == Tok::Var) {
      Token t = cur_;
      shift();
      return Term::variable(t.text);
    }
    if (cur_.kind == Tok::Number) {
      Token t = cur_;
      shift();
      return Term::constant(t.text);
    }
    Token t = expect(Tok::Ident, "a term");
    if (accept(Tok::LParen)) {
      std::vector<Term> args;
      args.push_back(term());
      while (accept(Tok::Comma)) args.push_back(term());
      expect(Tok::RParen, "')'");
      return Term::compound(t.text, std::move(args));
    }
    return Term::constant(t.text);
  }

  Atom atom() {
    Token t = expect(Tok::Ident, "a predicate symbol");
    Atom a(t.text);
    if (accept(Tok::LParen)) {
      a.args.push_back(term());
      while (accept(Tok::Comma)) a.args.push_back(term());
      expect(Tok::RParen, "')'");
    }
    return a;
  }

  std::vector<Atom> body() {
    std::vector<Atom> atoms;
    atoms.push_back(atom());
    while (accept(Tok::Comma)) atoms.push_back(atom());
    return atoms;
  }

  void statement(Program& p) {
    if (cur_.kind == Tok::Hash) {
      model_directive(p);
      return;
    }
    if (cur_.kind == Tok::Number) {
      prob_fact(p, /*learnable=*/false);
      return;
    }
    if (cur_.kind == Tok::Ident && cur_.text == "t" && peek().kind == Tok::LParen) {
      prob_fact(p, /*learnable=*/true);
      return;
    }
    if (cur_.kind == Tok::Ident && cur_.text == "gnn" && peek().kind == Tok::LParen) {
      gnn_fact(p);
      return;
    }
    clause(p);
  }

  void prob_fact(Program& p, bool learnable) {
    Token at = cur_;
    double prob;
    if (learnable) {
      shift();  // 't'
      expect(Tok::LParen, "'('");
      prob = number(expect(Tok::Number, "a probability"));
      expect(Tok::RParen, "')'");
    } else {
      prob = number(expect(Tok::Number, "a probability"));
    }
    expect(Tok::Annotate, "'::'");
    ProbFact f;
    f.atom = atom();
    f.prob = prob;
    f.learnable = learnable;
    f.line = at.line;
    f.col = at.col;
    expect(Tok::Dot, "'.'");
    p.prob_facts.push_back(std::move(f));
  }

  void gnn_fact(Program& p) {
    Token at = cur_;
    shift();  // 'gnn'
    expect(Tok::LParen, "'('");
    GnnFactSchema schema;
    schema.line = at.line;
    schema.col = at.col;
    schema.model_id = expect(Tok::Ident, "a model identifier").text;
    expect(Tok::Comma, "','");
    expect(Tok::LBracket, "'['");
    if (!accept(Tok::RBracket)) {
      schema.gamma.push_back(gamma_item());
      while (accept(Tok::Comma)) schema.gamma.push_back(gamma_item());
      expect(Tok::RBracket, "']'");
    }
    if (accept(Tok::Comma)) {
      expect(Tok::LBracket, "'['");
      if (!accept(Tok::RBracket)) {
        schema.targets.push_back(term());
        while (accept(Tok::Comma)) schema.targets.push_back(term());
        expect(Tok::RBracket, "']'");
      }
    }
    expect(Tok::RParen, "')'");
    expect(Tok::Annotate, "'::'");
    schema.head_group.push_back(atom());
    while (accept(Tok::Semicolon)) schema.head_group.push_back(atom());
    if (accept(Tok::Implies)) schema.guard = body();
    expect(Tok::Dot, "'.'");
    p.gnn_schemas.push_back(std::move(schema));
  }

  GammaItem gamma_item() {
    GammaItem item;
    if (cur_.kind == Tok::Ident && peek().kind == Tok::Slash) {
      item.is_indicator = true;
      item.pred = cur_.text;
      shift();  // predicate
      shift();  // '/'
      Token n = expect(Tok::Number, "an arity");
      item.arity = static_cast<int>(number(n));
      return item;
    }
    item.atom = atom();
    return item;
  }

  void model_directive(Program& p) {
    Token at = cur_;
    shift();  // '#'
    Token name = expect(Tok::Ident, "'model'");
    if (name.text != "model")
      throw DglError(ErrorKind::Syntax, "unknown directive '#" + name.text + "'",
                     name.line, name.col);
    expect(Tok::LParen, "'('");
    GnnConfig cfg;
    cfg.line = at.line;
    cfg.col = at.col;
    cfg.model_id = expect(Tok::Ident, "a model identifier").text;
    while (accept(Tok::Comma)) {
      Token key = expect(Tok::Ident, "a model option");
      expect(Tok::Eq, "'='");
      if (key.text == "layers") {
        cfg.num_layers = static_cast<int>(number(expect(Tok::Number, "a layer count")));
      } else if (key.text == "hidden") {
        cfg.hidden_dim = static_cast<int>(number(expect(Tok::Number, "a hidden size")));
      } else if (key.text == "readout") {
        Token v = expect(Tok::Ident, "node, edge, or graph");
        if (v.text == "node") cfg.readout = Readout::Node;
        else if (v.text == "edge") cfg.readout = Readout::Edge;
        else if (v.text == "graph") cfg.readout = Readout::Graph;
        else
          throw DglError(ErrorKind::Syntax, "unknown readout '" + v.text + "'",
                         v.line, v.col);
      } else {
        throw DglError(ErrorKind::Syntax, "unknown model option '" + key.text + "'",
                       key.line, key.col);
      }
    }
    expect(Tok::RParen, "')'");
    expect(Tok::Dot, "'.'");
    if (p.model_configs.count(cfg.model_id))
      throw DglError(ErrorKind::Duplicate,
                     "model '" + cfg.model_id + "' declared twice", at.line, at.col);
    p.model_configs.emplace(cfg.model_id, std::move(cfg));
  }

  void clause(Program& p) {
    Token at = cur_;
    Atom head = atom();
    if (accept(Tok::Implies)) {
      Rule r(std::move(head), body());
      expect(Tok::Dot, "'.'");
      p.rules.push_back(std::move(r));
      return;
    }
    expect(Tok::Dot, "'.'");
    // query/1 and evidence/1 heads are directives, not facts.
    if (head.predicate == "query" && head.args.size() == 1) {
      p.queries.push_back(unwrap_directive(head, at));
      return;
    }
    if (head.predicate == "evidence" && head.args.size() == 1) {
      p.evidence.push_back(unwrap_directive(head, at));
      return;
    }
    p.rules.emplace_back(std::move(head));
  }

  // query(move(a)) arrives with move(a) parsed as a compound term; rebuild the
  // atom it denotes.
  Atom unwrap_directive(const Atom& wrapper, const Token& at) {
    const Term& t = wrapper.args[0];
    if (t.kind() == TermKind::Variable)
      throw DglError(ErrorKind::Syntax, wrapper.predicate + " takes a ground atom",
                     at.line, at.col);
    if (t.kind() == TermKind::Constant) return Atom(t.symbol());
    Atom a(t.symbol());
    a.args = t.args();
    return a;
  }

  Lexer lexer_;
  Token cur_;
  Token lookahead_;
  bool lookahead_valid_ = false;
};

inline std::string format_double(double v) {
  // Shortest representation that parses back to the same double.
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) break;
  }
  std::string s(buf);
  if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
      s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
    s += ".0";
  return s;
}

}  // namespace detail

/// Parses DeepGraphLog source into an unchecked Program. Throws DglError with
/// line/column on malformed input.
inline Program parse(const std::string& source) {
  detail::Parser parser(source);
  return parser.parse_program();
}

/// Parses a single atom, e.g. a query string from the command line.
inline Atom parse_atom(const std::string& source) {
  detail::Parser parser(source);
  return parser.parse_single_atom();
}

/// Pretty-prints a Program such that re-parsing yields a structurally equal
/// Program (modulo validation-assigned fields).
inline std::string print_program(const Program& p) {
  std::string out;
  for (const auto& [id, cfg] : p.model_configs) {
    out += "#model(" + id + ", layers=" + std::to_string(cfg.num_layers) +
           ", hidden=" + std::to_string(cfg.hidden_dim) +
           ", readout=" + readout_name(cfg.readout) + ").\n";
  }
  for (const ProbFact& f : p.prob_facts) {
    if (f.learnable)
      out += "t(" + detail::format_double(f.prob) + ")::" + f.atom.text() + ".\n";
    else
      out += detail::format_double(f.prob) + "::" + f.atom.text() + ".\n";
  }
  for (const GnnFactSchema& s : p.gnn_schemas) {
    out += "gnn(" + s.model_id + ", [";
    for (size_t i = 0; i < s.gamma.size(); ++i) {
      if (i) out += ", ";
      out += s.gamma[i].text();
    }
    out += "], [";
    for (size_t i = 0; i < s.targets.size(); ++i) {
      if (i) out += ", ";
      out += s.targets[i].text();
    }
    out += "]) :: ";
    for (size_t i = 0; i < s.head_group.size(); ++i) {
      if (i) out += "; ";
      out += s.head_group[i].text();
    }
    if (!s.guard.empty()) {
      out += " :- ";
      for (size_t i = 0; i < s.guard.size(); ++i) {
        if (i) out += ", ";
        out += s.guard[i].text();
      }
    }
    out += ".\n";
  }
  for (const Rule& r : p.rules) out += r.text() + "\n";
  for (const Atom& q : p.queries) out += "query(" + q.text() + ").\n";
  for (const Atom& e : p.evidence) out += "evidence(" + e.text() + ").\n";
  return out;
}

}  // namespace dgl
