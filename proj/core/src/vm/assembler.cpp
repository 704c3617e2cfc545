#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "statelens/vm.hpp"

namespace statelens::vm {

namespace {

constexpr std::uint8_t kNoBase = 0xff;

struct Mnemonic {
  std::string_view name;
  Opcode op;
};

constexpr Mnemonic kMnemonics[] = {
    {"mov", Opcode::kMov},     {"add", Opcode::kAdd},
    {"sub", Opcode::kSub},     {"mul", Opcode::kMul},
    {"div", Opcode::kDiv},     {"mod", Opcode::kMod},
    {"and", Opcode::kAnd},     {"or", Opcode::kOr},
    {"xor", Opcode::kXor},     {"shl", Opcode::kShl},
    {"shr", Opcode::kShr},     {"cmp", Opcode::kCmp},
    {"jmp", Opcode::kJmp},     {"jeq", Opcode::kJeq},
    {"jz", Opcode::kJeq},      {"jne", Opcode::kJne},
    {"jnz", Opcode::kJne},     {"jlt", Opcode::kJlt},
    {"jle", Opcode::kJle},     {"jgt", Opcode::kJgt},
    {"jge", Opcode::kJge},     {"load", Opcode::kLoad},
    {"store", Opcode::kStore}, {"push", Opcode::kPush},
    {"pop", Opcode::kPop},     {"call", Opcode::kCall},
    {"ret", Opcode::kRet},     {"nop", Opcode::kNop},
    {"alloc", Opcode::kAlloc}, {"free", Opcode::kFree},
    {"recv", Opcode::kRecv},   {"send", Opcode::kSend},
    {"close", Opcode::kClose}, {"shutdown_rd", Opcode::kShutdownRd},
    {"halt", Opcode::kHalt},
};

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}
bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

std::optional<std::uint8_t> parse_register(std::string_view s) {
  if (s == "sp") return static_cast<std::uint8_t>(kStackPointer);
  if (s.size() < 2 || s.size() > 3 || s[0] != 'r') return std::nullopt;
  unsigned v = 0;
  auto [p, ec] = std::from_chars(s.data() + 1, s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v >= kNumRegisters)
    return std::nullopt;
  return static_cast<std::uint8_t>(v);
}

class Assembler {
 public:
  Assembler(const ParamMap& overrides) : overrides_(overrides) {}

  Program run(std::string_view text, std::string name) {
    program_.name = std::move(name);
    std::vector<std::pair<int, std::string>> lines;
    {
      std::istringstream in{std::string(text)};
      std::string raw;
      int n = 0;
      while (std::getline(in, raw)) {
        ++n;
        auto semi = raw.find(';');
        if (semi != std::string::npos) raw.resize(semi);
        auto t = trim(raw);
        if (!t.empty()) lines.emplace_back(n, std::move(t));
      }
    }
    // Directives and labels first so forward references resolve.
    std::vector<std::pair<int, std::string>> body;
    for (auto& [line, t] : lines) {
      line_ = line;
      std::string rest = t;
      while (true) {
        auto colon = rest.find(':');
        if (colon == std::string::npos) break;
        auto head = trim(std::string_view(rest).substr(0, colon));
        if (head.empty() || !is_ident_start(head[0]) ||
            !std::all_of(head.begin(), head.end(), is_ident_char))
          break;
        if (program_.labels.count(head))
          throw ParseError(line, "duplicate label '" + head + "'");
        program_.labels[head] = pending_count_;
        rest = trim(std::string_view(rest).substr(colon + 1));
      }
      if (rest.empty()) continue;
      if (rest[0] == '.') {
        directive(rest);
        continue;
      }
      body.emplace_back(line, rest);
      ++pending_count_;
    }
    for (auto& [line, t] : body) {
      line_ = line;
      program_.instructions.push_back(instruction(t));
    }
    if (program_.instructions.empty())
      throw ParseError(lines.empty() ? 1 : lines.back().first,
                       "program has no instructions (no entry point)");
    if (!entry_label_.empty()) {
      auto it = program_.labels.find(entry_label_);
      if (it == program_.labels.end())
        throw UnresolvedLabel(entry_line_, entry_label_);
      program_.entry = it->second;
    } else if (auto it = program_.labels.find("main");
               it != program_.labels.end()) {
      program_.entry = it->second;
    }
    for (auto& [label, idx] : program_.labels) {
      if (idx >= program_.instructions.size())
        throw ParseError(line_, "label '" + label + "' has no instruction");
    }
    for (auto& fix : fixups_) {
      auto it = program_.labels.find(fix.label);
      if (it == program_.labels.end()) throw UnresolvedLabel(fix.line, fix.label);
      program_.instructions[fix.index].operands[0].imm =
          static_cast<std::int64_t>(it->second);
    }
    return std::move(program_);
  }

 private:
  struct Fixup {
    std::size_t index;
    std::string label;
    int line;
  };

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(line_, what);
  }

  void directive(const std::string& t) {
    std::istringstream in(t);
    std::string kw;
    in >> kw;
    if (kw == ".param" || kw == ".equ") {
      std::string name, value;
      in >> name;
      std::getline(in, value);
      if (name.empty() || trim(value).empty()) fail("malformed " + kw);
      std::int64_t v = expr_value(trim(value));
      if (kw == ".param") {
        auto it = overrides_.find(name);
        if (it != overrides_.end()) v = it->second;
      }
      constants_[name] = v;
    } else if (kw == ".data") {
      std::string name, size_text;
      in >> name >> size_text;
      if (name.empty() || size_text.empty()) fail("malformed .data");
      auto size = expr_value(size_text);
      if (size <= 0) fail(".data size must be positive");
      if (program_.data_symbols.count(name)) fail("duplicate data '" + name + "'");
      std::uint64_t addr = kStaticBase + program_.data.size();
      program_.data_symbols[name] = addr;
      std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size), 0);
      std::string tok;
      std::size_t i = 0;
      while (in >> tok) {
        if (i >= bytes.size()) fail(".data initializer longer than size");
        bytes[i++] = static_cast<std::uint8_t>(expr_value(tok));
      }
      program_.data.insert(program_.data.end(), bytes.begin(), bytes.end());
      while (program_.data.size() % 8) program_.data.push_back(0);
    } else if (kw == ".entry") {
      in >> entry_label_;
      entry_line_ = line_;
      if (entry_label_.empty()) fail("malformed .entry");
    } else {
      fail("unknown directive '" + kw + "'");
    }
  }

  // expr := term (('+'|'-') term)* ; term := factor ('*' factor)*
  std::int64_t expr_value(const std::string& s) {
    pos_ = 0;
    text_ = s;
    auto v = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) fail("trailing characters in '" + s + "'");
    return v;
  }
  void skip_ws() {
    while (pos_ < text_.size() &&
           std::isspace(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
  }
  std::int64_t parse_expr() {
    auto v = parse_term();
    while (true) {
      skip_ws();
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) {
        char op = text_[pos_++];
        auto r = parse_term();
        v = op == '+' ? v + r : v - r;
      } else {
        return v;
      }
    }
  }
  std::int64_t parse_term() {
    auto v = parse_factor();
    while (true) {
      skip_ws();
      if (pos_ < text_.size() && text_[pos_] == '*') {
        ++pos_;
        v *= parse_factor();
      } else {
        return v;
      }
    }
  }
  std::int64_t parse_factor() {
    skip_ws();
    if (pos_ >= text_.size()) fail("expected a value in '" + text_ + "'");
    char c = text_[pos_];
    if (c == '-') {
      ++pos_;
      return -parse_factor();
    }
    if (c == '(') {
      ++pos_;
      auto v = parse_expr();
      skip_ws();
      if (pos_ >= text_.size() || text_[pos_] != ')') fail("missing ')'");
      ++pos_;
      return v;
    }
    if (c == '@') {
      ++pos_;
      auto name = ident();
      auto it = program_.data_symbols.find(name);
      if (it == program_.data_symbols.end()) fail("unknown data '" + name + "'");
      return static_cast<std::int64_t>(it->second);
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t start = pos_;
      while (pos_ < text_.size() &&
             std::isalnum(static_cast<unsigned char>(text_[pos_])))
        ++pos_;
      std::string_view num(text_.data() + start, pos_ - start);
      int base = 10;
      if (num.size() > 2 && num[0] == '0' && (num[1] == 'x' || num[1] == 'X')) {
        base = 16;
        num.remove_prefix(2);
      }
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), v, base);
      if (ec != std::errc() || p != num.data() + num.size())
        fail("bad number '" + std::string(num) + "'");
      return static_cast<std::int64_t>(v);
    }
    if (is_ident_start(c)) {
      auto name = ident();
      auto it = constants_.find(name);
      if (it == constants_.end()) fail("unknown constant '" + name + "'");
      return it->second;
    }
    fail("unexpected '" + std::string(1, c) + "'");
  }
  std::string ident() {
    std::size_t start = pos_;
    while (pos_ < text_.size() && is_ident_char(text_[pos_])) ++pos_;
    if (start == pos_) fail("expected identifier");
    return text_.substr(start, pos_ - start);
  }

  Operand value_operand(const std::string& s) {
    if (auto r = parse_register(s)) return {OperandKind::kReg, *r, 0};
    if (!s.empty() && s[0] == '[') fail("memory operand not allowed here");
    return {OperandKind::kImm, 0, expr_value(s)};
  }
  Operand reg_operand(const std::string& s) {
    auto r = parse_register(s);
    if (!r) fail("expected register, got '" + s + "'");
    return {OperandKind::kReg, *r, 0};
  }
  Operand mem_operand(const std::string& s) {
    if (s.size() < 2 || s.front() != '[' || s.back() != ']')
      fail("expected memory operand, got '" + s + "'");
    auto inner = trim(std::string_view(s).substr(1, s.size() - 2));
    std::size_t i = 0;
    while (i < inner.size() && is_ident_char(inner[i])) ++i;
    if (auto r = parse_register(inner.substr(0, i))) {
      auto rest = trim(std::string_view(inner).substr(i));
      std::int64_t disp = 0;
      if (!rest.empty()) {
        if (rest[0] != '+' && rest[0] != '-') fail("bad memory operand '" + s + "'");
        disp = expr_value(rest.substr(1));
        if (rest[0] == '-') disp = -disp;
      }
      return {OperandKind::kMem, *r, disp};
    }
    return {OperandKind::kMem, kNoBase, expr_value(inner)};
  }

  Instruction instruction(const std::string& t) {
    Instruction ins;
    ins.line = line_;
    std::size_t sp = 0;
    while (sp < t.size() && !std::isspace(static_cast<unsigned char>(t[sp]))) ++sp;
    std::string mnem = t.substr(0, sp);
    std::vector<std::string> ops;
    {
      std::string rest = trim(std::string_view(t).substr(sp));
      std::string cur;
      int depth = 0;
      for (char c : rest) {
        if (c == '[') ++depth;
        if (c == ']') --depth;
        if (c == ',' && depth == 0) {
          ops.push_back(trim(cur));
          cur.clear();
        } else {
          cur += c;
        }
      }
      if (!trim(cur).empty() || !ops.empty()) ops.push_back(trim(cur));
      for (auto& o : ops)
        if (o.empty()) fail("empty operand");
    }
    std::string base = mnem;
    auto dot = mnem.find('.');
    if (dot != std::string::npos) {
      base = mnem.substr(0, dot);
      auto w = mnem.substr(dot + 1);
      if (w != "1" && w != "2" && w != "4" && w != "8")
        fail("bad access width '" + w + "'");
      ins.width = static_cast<std::uint8_t>(w[0] - '0');
    }
    const Mnemonic* m = nullptr;
    for (auto& cand : kMnemonics)
      if (cand.name == base) m = &cand;
    if (!m) fail("unknown instruction '" + mnem + "'");
    ins.op = m->op;
    bool needs_width = ins.op == Opcode::kLoad || ins.op == Opcode::kStore;
    if (needs_width && ins.width == 0) fail("missing access width on '" + base + "'");
    if (!needs_width && ins.width != 0) fail("unexpected width on '" + base + "'");

    auto arity = [&](std::size_t lo, std::size_t hi) {
      if (ops.size() < lo || ops.size() > hi)
        fail("wrong operand count for '" + base + "'");
    };
    switch (ins.op) {
      case Opcode::kMov: case Opcode::kAdd: case Opcode::kSub:
      case Opcode::kMul: case Opcode::kDiv: case Opcode::kMod:
      case Opcode::kAnd: case Opcode::kOr:  case Opcode::kXor:
      case Opcode::kShl: case Opcode::kShr: case Opcode::kCmp:
        arity(2, 2);
        ins.operands[0] = reg_operand(ops[0]);
        ins.operands[1] = value_operand(ops[1]);
        break;
      case Opcode::kJmp: case Opcode::kJeq: case Opcode::kJne:
      case Opcode::kJlt: case Opcode::kJle: case Opcode::kJgt:
      case Opcode::kJge: case Opcode::kCall:
        arity(1, 1);
        ins.operands[0] = {OperandKind::kLabel, 0, 0};
        fixups_.push_back({pending_index(), ops[0], line_});
        break;
      case Opcode::kLoad:
        arity(2, 2);
        ins.operands[0] = reg_operand(ops[0]);
        ins.operands[1] = mem_operand(ops[1]);
        break;
      case Opcode::kStore:
        arity(2, 2);
        ins.operands[0] = mem_operand(ops[0]);
        ins.operands[1] = value_operand(ops[1]);
        break;
      case Opcode::kPush:
        arity(1, 1);
        ins.width = 8;
        ins.operands[0] = value_operand(ops[0]);
        break;
      case Opcode::kPop:
        arity(1, 1);
        ins.width = 8;
        ins.operands[0] = reg_operand(ops[0]);
        break;
      case Opcode::kRet: case Opcode::kNop: case Opcode::kClose:
      case Opcode::kShutdownRd: case Opcode::kHalt:
        arity(0, 0);
        break;
      case Opcode::kAlloc:
        arity(2, 2);
        ins.operands[0] = reg_operand(ops[0]);
        ins.operands[1] = value_operand(ops[1]);
        break;
      case Opcode::kFree:
        arity(1, 1);
        ins.operands[0] = reg_operand(ops[0]);
        break;
      case Opcode::kRecv:
        arity(3, 4);
        ins.operands[0] = reg_operand(ops[0]);
        ins.operands[1] = reg_operand(ops[1]);
        ins.operands[2] = value_operand(ops[2]);
        ins.operands[3] = {OperandKind::kImm, 0, ops.size() == 4 ? expr_value(ops[3]) : 0};
        break;
      case Opcode::kSend:
        arity(2, 3);
        ins.operands[0] = reg_operand(ops[0]);
        ins.operands[1] = value_operand(ops[1]);
        ins.operands[2] = {OperandKind::kImm, 0, ops.size() == 3 ? expr_value(ops[2]) : 0};
        break;
    }
    return ins;
  }

  std::size_t pending_index() const { return program_.instructions.size(); }

  const ParamMap& overrides_;
  Program program_;
  std::map<std::string, std::int64_t> constants_;
  std::vector<Fixup> fixups_;
  std::string entry_label_;
  int entry_line_ = 0;
  int line_ = 0;
  std::size_t pending_count_ = 0;
  std::string text_;
  std::size_t pos_ = 0;
};

}  // namespace

AssemblyError::AssemblyError(int line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what),
      line_(line) {}

UnresolvedLabel::UnresolvedLabel(int line, std::string label)
    : AssemblyError(line, "unresolved label '" + label + "'"),
      label_(std::move(label)) {}

std::optional<std::size_t> Program::label(const std::string& name) const {
  auto it = labels.find(name);
  if (it == labels.end()) return std::nullopt;
  return it->second;
}

int Program::line_of(std::size_t pc) const {
  return pc < instructions.size() ? instructions[pc].line : 0;
}

Program load_program(std::string_view text, const ParamMap& params,
                     std::string name) {
  return Assembler(params).run(text, std::move(name));
}

}  // namespace statelens::vm
