#include <algorithm>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "statelens/protocols.hpp"

namespace statelens::protocols {

namespace detail {
const std::map<std::string, std::string>& corpus_files();
}

namespace {

const std::vector<std::string> kNames = {
    "backdoor",         "counter-loop",    "replay-counter",
    "partial-shutdown", "handshake-bypass", "early-keys",
};

std::uint8_t parse_byte(const std::string& text) {
  std::size_t used = 0;
  unsigned long v = std::stoul(text, &used, 0);
  if (used != text.size() || v > 0xff)
    throw std::invalid_argument("bad byte '" + text + "'");
  return static_cast<std::uint8_t>(v);
}

std::vector<TemplateByte> parse_template(const std::string& text) {
  std::vector<TemplateByte> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    TemplateByte b;
    if (tok == "?n") {
      b.kind = TemplateByte::Kind::kNonce;
    } else if (tok.size() > 2 && tok.rfind("?r", 0) == 0) {
      b.kind = TemplateByte::Kind::kSequence;
      b.value = static_cast<std::uint8_t>(std::stoul(tok.substr(2)));
    } else {
      b.value = parse_byte("0x" + tok);
    }
    out.push_back(b);
  }
  return out;
}

ProtocolSpec parse_spec(const std::string& name, const vm::ParamMap& overrides) {
  auto json = nlohmann::json::parse(corpus_file(name + ".proto.json"));
  ProtocolSpec spec;
  spec.name = json.at("name").get<std::string>();
  spec.source = corpus_file(json.at("program").get<std::string>());
  for (auto& [k, v] : json.at("params").items()) spec.params[k] = v.get<std::int64_t>();
  for (auto& [k, v] : overrides) {
    if (!spec.params.count(k))
      throw std::invalid_argument("protocol " + name + " has no parameter " + k);
    spec.params[k] = v;
  }
  for (auto& in : json.at("inputs")) {
    InputSymbol sym;
    sym.symbol = in.at("symbol").get<std::string>();
    sym.message = parse_template(in.at("message").get<std::string>());
    sym.channel = in.value("channel", 0u);
    spec.inputs.push_back(std::move(sym));
  }
  for (auto& out : json.at("outputs"))
    spec.outputs.push_back({parse_byte(out.at("code").get<std::string>()),
                            out.at("symbol").get<std::string>()});
  spec.error_outputs = json.value("error_outputs", std::vector<std::string>{});
  spec.happy_flow = json.at("happy_flow").get<model::Word>();
  spec.disabled_outputs =
      json.value("disabled_outputs", std::vector<std::string>{model::kClosed});
  if (json.contains("encryption")) {
    auto& e = json["encryption"];
    spec.encryption = Encryption{parse_byte(e.at("marker").get<std::string>()),
                                 parse_byte(e.at("key").get<std::string>()),
                                 parse_byte(e.at("check").get<std::string>()),
                                 e.at("activate").get<std::string>()};
  }
  if (json.contains("sequence_echo")) {
    auto& e = json["sequence_echo"];
    spec.sequence_echo = SequenceEcho{e.at("offset").get<std::size_t>(),
                                      e.at("width").get<std::size_t>(),
                                      e.at("codes").get<std::vector<std::string>>()};
  }
  auto ref_text = corpus_file(json.at("reference").get<std::string>());
  auto ref_json = nlohmann::json::parse(ref_text);
  if (ref_json.value("infinite", false)) {
    spec.infinite = true;
  } else if (name == "backdoor") {
    spec.reference = backdoor_reference(static_cast<int>(spec.params.at("N")));
  } else if (name == "handshake-bypass") {
    spec.reference =
        handshake_bypass_reference(static_cast<int>(spec.params.at("READ_SEQ_LIMIT")));
  } else {
    spec.reference = model::import_json(ref_text);
  }
  return spec;
}

}  // namespace

std::vector<std::string> ProtocolSpec::input_names() const {
  std::vector<std::string> names;
  for (auto& i : inputs) names.push_back(i.symbol);
  return names;
}

std::vector<std::string> ProtocolSpec::output_names() const {
  std::vector<std::string> names;
  for (auto& o : outputs) names.push_back(o.symbol);
  for (auto* r : {&model::kEmpty, &model::kClosed, &model::kFault, &model::kDecryptError})
    if (std::find(names.begin(), names.end(), *r) == names.end()) names.push_back(*r);
  return names;
}

const InputSymbol& ProtocolSpec::input(const std::string& symbol) const {
  for (auto& i : inputs)
    if (i.symbol == symbol) return i;
  throw std::invalid_argument("unknown input symbol '" + symbol + "' for " + name);
}

bool ProtocolSpec::has_input(const std::string& symbol) const {
  return std::any_of(inputs.begin(), inputs.end(),
                     [&](const InputSymbol& i) { return i.symbol == symbol; });
}

std::shared_ptr<const vm::Program> ProtocolSpec::program() const {
  if (!program_)
    program_ = std::make_shared<const vm::Program>(vm::load_program(source, params, name));
  return program_;
}

std::string corpus_file(const std::string& filename) {
  auto& files = detail::corpus_files();
  auto it = files.find(filename);
  if (it == files.end()) throw UnknownProtocol("no bundled file " + filename);
  return it->second;
}

std::vector<std::string> corpus_names() { return kNames; }

ProtocolSpec load_spec(const std::string& name, const vm::ParamMap& params) {
  if (std::find(kNames.begin(), kNames.end(), name) == kNames.end())
    throw UnknownProtocol("unknown protocol '" + name + "'");
  return parse_spec(name, params);
}

std::vector<ProtocolSpec> corpus() {
  std::vector<ProtocolSpec> specs;
  for (auto& n : kNames) specs.push_back(load_spec(n));
  return specs;
}

}  // namespace statelens::protocols
