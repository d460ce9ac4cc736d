// Copyright 2026 The vprank Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// vpr_server: serves rank/re-rank queries over HTTP against one gallery.
//
//   vpr_server --gallery gallery.efvp [--port 8080] [--host 127.0.0.1] [--dim D]
//
// The port is bound before the gallery loads; /v1/health answers 503 until
// loading completes.

#include <CLI11.hpp>

#include <atomic>
#include <iostream>
#include <thread>

#include "vpr/server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Visual place recognition query service"};
  std::string gallery_path;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t dim = 0;
  app.add_option("--gallery", gallery_path, "Gallery .efvp")->required();
  app.add_option("--port", port, "Listen port")->capture_default_str();
  app.add_option("--host", host, "Listen address")->capture_default_str();
  auto* dim_opt = app.add_option("--dim", dim, "PCA dimension for the global stage");
  app.set_version_flag("--version", std::string(vpr::kVersion));
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  vpr::QueryService service;
  httplib::Server server;
  vpr::bind_routes(server, service);
  if (!server.bind_to_port(host, port)) {
    std::cerr << "cannot bind " << host << ":" << port << '\n';
    return 2;
  }

  std::atomic<int> status{0};
  std::thread loader([&] {
    try {
      auto gallery = std::make_shared<const vpr::FeatureSet>(vpr::load_feature_set(gallery_path));
      const auto size = gallery->size();
      service.load(std::move(gallery), dim_opt->count() > 0 ? std::optional<std::size_t>(dim) : std::nullopt);
      std::cerr << "loaded " << size << " records from " << gallery_path << '\n';
    } catch (const vpr::Error& e) {
      std::cerr << "error (" << vpr::to_string(e.code()) << "): " << e.what() << '\n';
      status = vpr::exit_code_for(e.code());
      server.stop();
    }
  });
  std::cerr << "listening on " << host << ":" << port << '\n';
  server.listen_after_bind();
  loader.join();
  return status;
}
