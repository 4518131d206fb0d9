#include "sifu/analyzer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "sifu/workspace.hpp"

namespace sifu {

namespace {

struct Token {
  enum class Kind { Ident, Number, Punct, Literal } kind;
  std::string text;
  int line;
};

std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  int line = 1;
  bool line_start = true;
  std::size_t i = 0;
  auto peek = [&](std::size_t k) { return i + k < src.size() ? src[i + k] : '\0'; };
  while (i < src.size()) {
    const char c = src[i];
    if (c == '\n') { ++line; ++i; line_start = true; continue; }
    if (std::isspace(static_cast<unsigned char>(c))) { ++i; continue; }
    if (c == '/' && peek(1) == '/') {
      while (i < src.size() && src[i] != '\n') ++i;
      continue;
    }
    if (c == '/' && peek(1) == '*') {
      i += 2;
      while (i < src.size() && !(src[i] == '*' && peek(1) == '/')) {
        if (src[i] == '\n') ++line;
        ++i;
      }
      i += 2;
      continue;
    }
    if (c == '#' && line_start) {
      // Preprocessor line, with backslash continuations.
      while (i < src.size() && src[i] != '\n') {
        if (src[i] == '\\' && peek(1) == '\n') { ++line; ++i; }
        ++i;
      }
      continue;
    }
    line_start = false;
    if (c == '"' || c == '\'') {
      const std::size_t start = i++;
      while (i < src.size() && src[i] != c && src[i] != '\n') {
        if (src[i] == '\\') ++i;
        ++i;
      }
      ++i;
      out.push_back({Token::Kind::Literal, std::string(src.substr(start, std::min(i, src.size()) - start)), line});
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = i;
      while (i < src.size() && (std::isalnum(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
      out.push_back({Token::Kind::Ident, std::string(src.substr(start, i - start)), line});
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      const std::size_t start = i;
      while (i < src.size() && (std::isalnum(static_cast<unsigned char>(src[i])) || src[i] == '.')) ++i;
      out.push_back({Token::Kind::Number, std::string(src.substr(start, i - start)), line});
      continue;
    }
    static const char* kTwo[] = {"<=", ">=", "==", "!=", "&&", "||", "++", "--", "->", "+=", "-=", "<<", ">>"};
    std::string two{c, peek(1)};
    if (std::find(std::begin(kTwo), std::end(kTwo), two) != std::end(kTwo)) {
      out.push_back({Token::Kind::Punct, two, line});
      i += 2;
      continue;
    }
    out.push_back({Token::Kind::Punct, std::string(1, c), line});
    ++i;
  }
  return out;
}

bool is_type_word(const std::string& s) {
  static const std::set<std::string> kTypes = {
      "int",    "char",   "short",    "long",   "unsigned", "signed", "float",  "double",
      "void",   "bool",   "size_t",   "static", "const",    "struct", "extern", "uint8_t",
      "int8_t", "uint16_t", "int16_t", "uint32_t", "int32_t", "uint64_t", "int64_t", "auto"};
  return kTypes.contains(s);
}

bool is_compare(const std::string& s) { return s == "<" || s == "<=" || s == ">" || s == ">="; }

struct Function {
  std::string name;
  std::size_t begin;  // index of '{'
  std::size_t end;    // index of matching '}'
};

std::vector<Function> functions(const std::vector<Token>& t) {
  std::vector<Function> out;
  int depth = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i].text == "{" && t[i].kind == Token::Kind::Punct) {
      if (depth == 0) {
        // Walk back over trailing qualifiers to the closing parenthesis.
        std::size_t k = i;
        while (k > 0 && t[k - 1].kind == Token::Kind::Ident) --k;
        if (k > 0 && t[k - 1].text == ")") {
          int paren = 0;
          std::size_t open = k - 1;
          for (std::size_t j = k; j-- > 0;) {
            if (t[j].text == ")") ++paren;
            else if (t[j].text == "(" && --paren == 0) { open = j; break; }
          }
          int d = 0;
          std::size_t close = i;
          for (std::size_t j = i; j < t.size(); ++j) {
            if (t[j].text == "{") ++d;
            else if (t[j].text == "}" && --d == 0) { close = j; break; }
          }
          const std::string name = open > 0 && t[open - 1].kind == Token::Kind::Ident ? t[open - 1].text : "";
          if (!name.empty() && name != "if" && name != "while" && name != "for" && name != "switch")
            out.push_back({name, i, close});
        }
      }
      ++depth;
    } else if (t[i].text == "}" && t[i].kind == Token::Kind::Punct) {
      depth = std::max(0, depth - 1);
    }
  }
  return out;
}

std::map<std::string, std::string> array_sizes(const std::vector<Token>& t) {
  std::map<std::string, std::string> out;
  for (std::size_t i = 1; i + 3 < t.size(); ++i) {
    if (t[i].kind == Token::Kind::Ident && t[i + 1].text == "[" && t[i + 2].kind == Token::Kind::Number &&
        t[i + 3].text == "]" && (is_type_word(t[i - 1].text) || t[i - 1].text == "*"))
      out[t[i].text] = t[i + 2].text;
  }
  return out;
}

struct Comparison {
  std::size_t at;
  std::string text;   // e.g. "i<4"
  std::string bound;  // numeric side
  bool upper;         // index is bounded from above
};

// Comparisons of `var` against a number within [from, to).
std::vector<Comparison> comparisons_of(const std::vector<Token>& t, const std::string& var,
                                       std::size_t from, std::size_t to) {
  std::vector<Comparison> out;
  for (std::size_t i = from; i + 2 < to + 1 && i + 2 < t.size(); ++i) {
    const auto& a = t[i];
    const auto& op = t[i + 1];
    const auto& b = t[i + 2];
    if (!is_compare(op.text)) continue;
    if (a.kind == Token::Kind::Ident && a.text == var && b.kind == Token::Kind::Number) {
      out.push_back({i, a.text + op.text + b.text, b.text, op.text[0] == '<'});
    } else if (a.kind == Token::Kind::Number && b.kind == Token::Kind::Ident && b.text == var) {
      out.push_back({i, a.text + op.text + b.text, a.text, op.text[0] == '>'});
    }
  }
  return out;
}

bool compared_before(const std::vector<Token>& t, const std::string& var, std::size_t from, std::size_t to) {
  for (std::size_t i = from; i < to && i + 1 < t.size(); ++i) {
    if (t[i].text != var || t[i].kind != Token::Kind::Ident) continue;
    if (is_compare(t[i + 1].text) || (i > 0 && is_compare(t[i - 1].text))) return true;
  }
  return false;
}

Finding make(const std::string& path, int line, std::string rule, Severity sev, std::string message,
             std::map<std::string, std::string> captures) {
  Finding f;
  f.source_tool = kBuiltinToolName;
  f.rule_id = std::move(rule);
  f.file = path;
  f.line = line;
  f.severity = sev;
  f.message = std::move(message);
  f.captures = std::move(captures);
  return f;
}

void index_bound(const std::string& path, const std::vector<Token>& t, const Function& fn,
                 std::vector<Finding>& out) {
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = fn.begin + 1; i + 3 < fn.end; ++i) {
    if (t[i].kind != Token::Kind::Ident || t[i + 1].text != "[" || t[i + 2].kind != Token::Kind::Ident ||
        t[i + 3].text != "]")
      continue;
    if (is_type_word(t[i - 1].text)) continue;  // declaration
    const auto& array = t[i].text;
    const auto& index = t[i + 2].text;
    if (!seen.insert({array, index}).second) continue;
    if (compared_before(t, index, fn.begin, i)) continue;
    auto later = comparisons_of(t, index, i + 4, fn.end);
    if (later.empty()) continue;
    auto pick = std::find_if(later.begin(), later.end(), [](const Comparison& c) { return c.upper; });
    const auto& check = pick != later.end() ? *pick : later.front();
    out.push_back(make(path, t[i].line, "UB.INDEX_BOUND", Severity::Error,
                       "'" + array + "[" + index + "]' is read before '" + check.text +
                           "' is checked; the compiler may drop the check",
                       {{"symbol", index}, {"array", array}, {"check", check.text},
                        {"bound", check.bound}, {"function", fn.name}}));
  }
}

void loop_bound(const std::string& path, const std::vector<Token>& t, const Function& fn,
                const std::map<std::string, std::string>& sizes, std::vector<Finding>& out) {
  for (std::size_t i = fn.begin + 1; i + 1 < fn.end; ++i) {
    if (t[i].text != "for" || t[i + 1].text != "(") continue;
    // header = tokens up to the matching ')'
    int paren = 0;
    std::size_t close = i + 1;
    for (std::size_t j = i + 1; j < fn.end; ++j) {
      if (t[j].text == "(") ++paren;
      else if (t[j].text == ")" && --paren == 0) { close = j; break; }
    }
    for (std::size_t j = i + 2; j + 2 < close; ++j) {
      if (t[j].kind != Token::Kind::Ident || t[j + 1].text != "<=" || t[j + 2].kind != Token::Kind::Number)
        continue;
      const auto& var = t[j].text;
      const auto& bound = t[j + 2].text;
      // body: a braced block or a single statement
      std::size_t body_end = close + 1;
      if (body_end < fn.end && t[body_end].text == "{") {
        int d = 0;
        for (std::size_t k = body_end; k < fn.end; ++k) {
          if (t[k].text == "{") ++d;
          else if (t[k].text == "}" && --d == 0) { body_end = k; break; }
        }
      } else {
        while (body_end < fn.end && t[body_end].text != ";") ++body_end;
      }
      for (std::size_t k = close + 1; k + 3 <= body_end; ++k) {
        if (t[k].kind == Token::Kind::Ident && t[k + 1].text == "[" && t[k + 2].text == var && t[k + 3].text == "]") {
          auto sz = sizes.find(t[k].text);
          if (sz == sizes.end() || sz->second != bound) continue;
          out.push_back(make(path, t[j].line, "UB.LOOP_BOUND", Severity::Error,
                             "loop condition '" + var + "<=" + bound + "' lets '" + t[k].text + "[" + var +
                                 "]' run one element past the end",
                             {{"symbol", var}, {"array", t[k].text}, {"check", var + "<=" + bound},
                              {"bound", bound}, {"function", fn.name}}));
          break;
        }
      }
    }
  }
}

std::vector<std::vector<Token>> call_args(const std::vector<Token>& t, std::size_t open, std::size_t limit) {
  std::vector<std::vector<Token>> args(1);
  int depth = 0;
  for (std::size_t k = open; k < limit; ++k) {
    const auto& s = t[k].text;
    if (s == "(" || s == "[") { if (depth++ > 0) args.back().push_back(t[k]); continue; }
    if (s == ")" || s == "]") {
      if (--depth == 0) break;
      args.back().push_back(t[k]);
      continue;
    }
    if (s == "," && depth == 1) { args.emplace_back(); continue; }
    args.back().push_back(t[k]);
  }
  return args;
}

void unchecked_copy(const std::string& path, const std::vector<Token>& t, const Function& fn,
                    std::vector<Finding>& out) {
  static const std::set<std::string> kUnbounded = {"strcpy", "strcat", "gets", "sprintf", "vsprintf"};
  static const std::set<std::string> kSized = {"memcpy", "memmove", "strncpy", "strncat"};
  for (std::size_t i = fn.begin + 1; i + 1 < fn.end; ++i) {
    if (t[i].kind != Token::Kind::Ident || t[i + 1].text != "(") continue;
    const auto& name = t[i].text;
    if (kUnbounded.contains(name)) {
      auto args = call_args(t, i + 1, fn.end);
      const std::string dest = !args.empty() && args[0].size() == 1 ? args[0][0].text : "";
      out.push_back(make(path, t[i].line, "MEM.UNCHECKED_COPY", Severity::Error,
                         "'" + name + "' copies without a length bound",
                         {{"symbol", name}, {"target", dest}, {"function", fn.name}}));
    } else if (kSized.contains(name)) {
      auto args = call_args(t, i + 1, fn.end);
      if (args.size() < 3 || args[2].size() != 1 || args[2][0].kind != Token::Kind::Ident) continue;
      const auto& len = args[2][0].text;
      if (compared_before(t, len, fn.begin, i)) continue;
      const std::string dest = args[0].size() == 1 ? args[0][0].text : "";
      out.push_back(make(path, t[i].line, "MEM.UNCHECKED_COPY", Severity::Error,
                         "length '" + len + "' passed to '" + name + "' is never checked",
                         {{"symbol", len}, {"target", dest}, {"function", fn.name}}));
    }
  }
}

void signed_overflow_check(const std::string& path, const std::vector<Token>& t, const Function& fn,
                           std::vector<Finding>& out) {
  for (std::size_t i = fn.begin + 1; i + 4 < fn.end; ++i) {
    if (t[i].kind != Token::Kind::Ident || t[i + 1].text != "+" || t[i + 2].kind != Token::Kind::Ident ||
        !is_compare(t[i + 3].text) || t[i + 4].kind != Token::Kind::Ident)
      continue;
    const auto& lhs = t[i].text;
    const auto& rhs = t[i + 2].text;
    const auto& other = t[i + 4].text;
    if (other != lhs && other != rhs) continue;
    out.push_back(make(path, t[i].line, "INT.SIGNED_OVERFLOW_CHECK", Severity::Warning,
                       "'" + lhs + " + " + rhs + " " + t[i + 3].text + " " + other +
                           "' relies on wrap-around, which is undefined for signed types",
                       {{"symbol", lhs}, {"check", lhs + "+" + rhs + t[i + 3].text + other}, {"function", fn.name}}));
  }
}

bool is_c_family(const std::string& path) {
  static const char* kExt[] = {".c", ".h", ".cc", ".cpp", ".cxx", ".hpp", ".hh"};
  return std::any_of(std::begin(kExt), std::end(kExt), [&](const char* e) { return path.ends_with(e); });
}

}  // namespace

std::vector<Finding> analyze_source(const std::string& path, std::string_view text) {
  const auto tokens = tokenize(text);
  const auto sizes = array_sizes(tokens);
  std::vector<Finding> out;
  for (const auto& fn : functions(tokens)) {
    index_bound(path, tokens, fn, out);
    loop_bound(path, tokens, fn, sizes, out);
    unchecked_copy(path, tokens, fn, out);
    signed_overflow_check(path, tokens, fn, out);
  }
  std::stable_sort(out.begin(), out.end(), FindingLess{});
  return out;
}

std::vector<Finding> builtin_analyze(const Workspace& w) {
  std::vector<Finding> out;
  for (const auto& rel : w.source_files()) {
    if (!is_c_family(rel)) continue;
    std::ifstream in(w.resolve(rel), std::ios::binary);
    if (!in) continue;
    std::ostringstream ss;
    ss << in.rdbuf();
    auto found = analyze_source(rel, ss.str());
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

AnalyzerDescriptor builtin_analyzer_descriptor() {
  return {kBuiltinToolName, "sarif",
          {"UB.INDEX_BOUND", "UB.LOOP_BOUND", "MEM.UNCHECKED_COPY", "INT.SIGNED_OVERFLOW_CHECK"}};
}

}  // namespace sifu
