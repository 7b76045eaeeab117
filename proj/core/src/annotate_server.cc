#include <sys/socket.h>

#include <atomic>

#include "httplib.h"
#include "physground/annotate_service.h"
#include "physground/errors.h"

namespace physground {

struct AnnotationServer::Impl {
  AnnotationService* service;
  Options options;
  httplib::Server server;
  std::atomic<bool> bound{false};
};

AnnotationServer::AnnotationServer(AnnotationService& service, Options options) : impl_(std::make_unique<Impl>()) {
  impl_->service = &service;
  impl_->options = std::move(options);
  // No SO_REUSEPORT, so a second server on a taken port fails to bind.
  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  });
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle_http(*impl_->service, req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type.c_str());
  };
  for (const char* pattern : {"/health", "/sessions", "/sessions/.*", "/admin/.*"}) {
    impl_->server.Get(pattern, handler);
    impl_->server.Post(pattern, handler);
  }
  if (!impl_->options.static_dir.empty() && !impl_->server.set_mount_point("/", impl_->options.static_dir))
    throw InvalidInput("static directory '" + impl_->options.static_dir + "' does not exist");
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind() {
  auto& o = impl_->options;
  int port;
  if (o.port == 0) {
    port = impl_->server.bind_to_any_port(o.host);
  } else {
    port = impl_->server.bind_to_port(o.host, o.port) ? o.port : -1;
  }
  if (port < 0) throw TransportError("cannot bind " + o.host + ":" + std::to_string(o.port));
  impl_->bound = true;
  return port;
}

void AnnotationServer::run() {
  if (!impl_->bound) bind();
  impl_->server.listen_after_bind();
}

void AnnotationServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace physground
