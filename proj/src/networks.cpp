#include "varda/networks.hpp"

#include <sstream>

namespace varda {

const char* role_name(Role r) {
  switch (r) {
    case Role::encoder_S: return "encoder_S";
    case Role::encoder_T: return "encoder_T";
    case Role::decoder_S: return "decoder_S";
    case Role::decoder_T: return "decoder_T";
    case Role::segmentor_shared: return "segmentor_shared";
  }
  return "?";
}

void NetConfig::validate() const {
  VARDA_REQUIRE(height >= 8 && width >= 8 && height % 8 == 0 && width % 8 == 0,
                "image size must be a positive multiple of 8, got " + std::to_string(height) + "x" +
                    std::to_string(width));
  VARDA_REQUIRE(channels >= 1 && classes >= 2, "need at least one channel and two classes");
  VARDA_REQUIRE(latent_channels >= 1 && enc_width1 >= 1 && enc_width2 >= 1 && enc_width3 >= 1 &&
                    segmentor_width >= 1 && decoder_width >= 1,
                "layer widths must be positive");
  VARDA_REQUIRE(decoder_depth >= 0, "decoder depth must be >= 0");
}

std::vector<KeyValue> NetConfig::entries() const {
  auto kv = [](const char* k, const std::string& v) { return KeyValue{k, v, 0}; };
  auto i = [](auto v) { return std::to_string(v); };
  return {kv("height", i(height)),
          kv("width", i(width)),
          kv("channels", i(channels)),
          kv("classes", i(classes)),
          kv("latent_channels", i(latent_channels)),
          kv("enc_width1", i(enc_width1)),
          kv("enc_width2", i(enc_width2)),
          kv("enc_width3", i(enc_width3)),
          kv("segmentor_width", i(segmentor_width)),
          kv("decoder_depth", i(decoder_depth)),
          kv("decoder_width", i(decoder_width)),
          kv("conditioning", conditioning == Conditioning::with_label ? "with_label" : "without_label"),
          kv("init_seed", i(init_seed))};
}

bool NetConfig::assign(const KeyValue& kv) {
  const std::string& k = kv.key;
  if (k == "height") height = parse_int(kv);
  else if (k == "width") width = parse_int(kv);
  else if (k == "channels") channels = parse_int(kv);
  else if (k == "classes") classes = int(parse_int(kv));
  else if (k == "latent_channels") latent_channels = parse_int(kv);
  else if (k == "enc_width1") enc_width1 = parse_int(kv);
  else if (k == "enc_width2") enc_width2 = parse_int(kv);
  else if (k == "enc_width3") enc_width3 = parse_int(kv);
  else if (k == "segmentor_width") segmentor_width = parse_int(kv);
  else if (k == "decoder_depth") decoder_depth = int(parse_int(kv));
  else if (k == "decoder_width") decoder_width = parse_int(kv);
  else if (k == "init_seed") init_seed = parse_uint(kv);
  else if (k == "conditioning") {
    if (kv.value == "with_label") conditioning = Conditioning::with_label;
    else if (kv.value == "without_label") conditioning = Conditioning::without_label;
    else throw ConfigError("conditioning: expected with_label or without_label", kv.line);
  } else {
    return false;
  }
  return true;
}

std::string NetConfig::to_text() const {
  std::ostringstream os;
  for (const auto& kv : entries()) os << kv.key << '=' << kv.value << '\n';
  return os.str();
}

NetConfig NetConfig::from_text(const std::string& text) {
  NetConfig c;
  apply_key_values(parse_key_values(text), [&](const KeyValue& kv) { return c.assign(kv); });
  return c;
}

std::vector<std::string> config_diff(const NetConfig& a, const NetConfig& b) {
  const auto ea = a.entries(), eb = b.entries();
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ea.size(); ++i)
    if (ea[i].value != eb[i].value) out.push_back(ea[i].key + ": " + ea[i].value + " vs " + eb[i].value);
  return out;
}

}  // namespace varda
