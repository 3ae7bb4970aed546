#include "cathnav/service/server.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <deque>
#include <iomanip>
#include <sstream>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "cathnav/planning.hpp"

namespace cathnav::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

bool valid_name(const std::string& s) {
  return !s.empty() && s.size() <= 128 && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
}

std::string error_message(const std::string& message, std::optional<SessionState> state = std::nullopt) {
  json j = {{"type", "error"}, {"message", message}};
  if (state) j["state"] = to_string(*state);
  return j.dump();
}

struct StartRequest {
  std::string scenario;
  Guidance guidance = Guidance::centerline;
  std::vector<Vec3> guidance_path;
  SessionOptions options;
  bool fast = false;
};

}  // namespace

std::vector<std::string> list_scenarios(const std::filesystem::path& dir) {
  std::vector<std::string> names = preset_names();
  if (!dir.empty() && std::filesystem::is_directory(dir)) {
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      const auto stem = e.path().stem().string();
      if (e.path().extension() == ".json" && valid_name(stem)) names.push_back(stem);
    }
  }
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  return names;
}

Scenario lookup_scenario(const std::string& name, const std::filesystem::path& dir) {
  if (!valid_name(name)) throw ConfigError("invalid scenario name '" + name + "'");
  if (!dir.empty()) {
    const auto file = dir / (name + ".json");
    if (std::filesystem::exists(file)) return load_scenario(file);
  }
  const auto presets = preset_names();
  if (std::find(presets.begin(), presets.end(), name) != presets.end()) return preset_scenario(name);
  throw ConfigError("unknown scenario '" + name + "'");
}

struct Server::Impl {
  explicit Impl(ServerOptions o) : options(std::move(o)), acceptor(ioc), reports(options.reports_dir) {
    options.session.validate();
    const tcp::endpoint ep(net::ip::make_address(options.host), options.port);
    acceptor.open(ep.protocol());
    acceptor.set_option(net::socket_base::reuse_address(true));
    acceptor.bind(ep);
    acceptor.listen();
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    std::ostringstream os;
    os << std::hex << std::chrono::duration_cast<std::chrono::seconds>(now).count();
    id_prefix = os.str();
  }

  std::string next_id() {
    std::ostringstream os;
    os << id_prefix << '-' << std::setw(4) << std::setfill('0') << ++counter;
    return os.str();
  }

  void accept();

  ServerOptions options;
  net::io_context ioc{1};
  tcp::acceptor acceptor;
  ReportStore reports;
  std::string id_prefix;
  unsigned long counter = 0;
};

namespace {

class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(tcp::socket socket, Server::Impl& server)
      : ws_(std::move(socket)), server_(server), timer_(ws_.get_executor()) {}

  void run(http::request<http::string_body> req) {
    upgrade_ = std::move(req);
    ws_.async_accept(upgrade_, [self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->read();
    });
  }

 private:
  struct Outgoing {
    std::string text;
    bool droppable;
  };

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->timer_.cancel();
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->handle(text);
      self->read();
    });
  }

  void handle(const std::string& text) {
    json msg;
    try {
      msg = json::parse(text);
    } catch (const json::parse_error& e) {
      send(error_message(std::string("malformed message: ") + e.what()), false);
      return;
    }
    if (!msg.is_object()) {
      send(error_message("message must be a JSON object"), false);
      return;
    }
    if (msg.contains("version") && msg["version"] != kProtocolVersion) {
      send(error_message("unsupported protocol version"), false);
      return;
    }
    const std::string type = msg.value("type", "");
    try {
      if (type == "start") {
        if (session_ && !session_->terminal()) {
          send(error_message("a session is already active on this connection", session_->state()), false);
          return;
        }
        start(parse_start(msg));
      } else if (type == "reset") {
        if (!last_start_) {
          send(error_message("nothing to reset; send start first"), false);
          return;
        }
        start(*last_start_);
      } else if (type == "command") {
        on_command(msg);
      } else {
        send(error_message("unknown message type '" + type + "'"), false);
      }
    } catch (const json::exception& e) {
      send(error_message(std::string("malformed ") + type + " message: " + e.what()), false);
    } catch (const Error& e) {
      send(error_message(e.what()), false);
    }
  }

  StartRequest parse_start(const json& msg) const {
    StartRequest r;
    r.scenario = msg.at("scenario").get<std::string>();
    r.guidance = guidance_from(msg.value("guidance", "centerline"));
    r.options = server_.options.session;
    r.options.seed = msg.value("seed", std::uint64_t{0});
    if (msg.contains("start_index")) r.options.start_index = msg["start_index"].get<std::size_t>();
    if (msg.contains("target_particle")) r.options.target_particle = msg["target_particle"].get<std::size_t>();
    r.options.heartbeat = msg.value("heartbeat", r.options.heartbeat);
    r.options.contact_deformation = msg.value("contact_deformation", r.options.contact_deformation);
    r.fast = msg.value("fast", false);
    if (r.guidance == Guidance::cgail) {
      if (msg.contains("guidance_path")) {
        for (const auto& p : msg["guidance_path"]) {
          r.guidance_path.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
        }
      } else {
        if (!valid_name(r.scenario)) throw ConfigError("invalid scenario name");
        const auto file = server_.options.plans_dir / (r.scenario + ".json");
        if (server_.options.plans_dir.empty() || !std::filesystem::exists(file)) {
          throw ConfigError("no planned path available for scenario '" + r.scenario + "'");
        }
        r.guidance_path = load_path(file).waypoints();
      }
    }
    return r;
  }

  void start(const StartRequest& r) {
    timer_.cancel();
    auto scenario = lookup_scenario(r.scenario, server_.options.scenarios_dir);
    session_ = std::make_unique<Session>(server_.next_id(), scenario, r.guidance, r.guidance_path, r.options);
    last_start_ = r;
    fast_ = r.fast;
    send(session_->session_message(), false);
    send(session_->mesh_message(), false);
    session_->start();
    next_tick_ = std::chrono::steady_clock::now();
    schedule_tick();
  }

  void on_command(const json& msg) {
    if (!session_) {
      send(error_message("no session; send start first"), false);
      return;
    }
    BendCommand cmd;
    cmd.alpha_rate = msg.value("alpha_rate", 0.0);
    cmd.gamma_rate = msg.value("gamma_rate", 0.0);
    cmd.insertion_velocity = msg.value("insertion_velocity", 0.0);
    const CommandAck ack = session_->command(cmd);
    if (!ack.accepted) {
      send(error_message("command rejected: " + ack.reason, ack.state), false);
      return;
    }
    send(json{{"type", "ack"},
              {"tick", session_->ticks()},
              {"state", to_string(ack.state)},
              {"latched",
               {{"alpha_rate", ack.latched.alpha_rate},
                {"gamma_rate", ack.latched.gamma_rate},
                {"insertion_velocity", ack.latched.insertion_velocity}}}}
             .dump(),
         true);
  }

  void schedule_tick() {
    if (fast_) {
      timer_.expires_after(std::chrono::nanoseconds(0));
    } else {
      next_tick_ += std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(session_->options().tick_dt));
      timer_.expires_at(next_tick_);
    }
    timer_.async_wait([self = shared_from_this(), s = session_.get()](beast::error_code ec) {
      if (ec || self->closed_ || self->session_.get() != s) return;
      self->tick();
    });
  }

  void tick() {
    if (!session_ || session_->state() != SessionState::running) return;
    const StateFrame frame = session_->tick();
    send(frame_to_json(frame), !session_->terminal());
    if (!session_->terminal()) {
      schedule_tick();
      return;
    }
    server_.reports.put(session_->id(), session_->report());
    send(json{{"type", "terminal"},
              {"id", session_->id()},
              {"state", to_string(session_->state())},
              {"reason", session_->terminal_reason()},
              {"tick", session_->ticks()},
              {"clock", session_->clock()},
              {"report_id", session_->id()},
              {"report", json::parse(report_to_json(session_->report()))}}
             .dump(),
         false);
  }

  // Frames are droppable: when a slow client lets them pile up, the oldest
  // pending one goes. Control messages are always delivered.
  void send(std::string text, bool droppable) {
    if (closed_) return;
    if (droppable) {
      const std::size_t first = writing_ ? 1 : 0;
      std::size_t pending = 0;
      for (std::size_t i = first; i < queue_.size(); ++i) pending += queue_[i].droppable;
      if (pending >= server_.options.frame_queue) {
        for (std::size_t i = first; i < queue_.size(); ++i) {
          if (queue_[i].droppable) {
            queue_.erase(queue_.begin() + static_cast<long>(i));
            ++dropped_;
            break;
          }
        }
      }
    }
    queue_.push_back({std::move(text), droppable});
    if (!writing_) write_next();
  }

  void write_next() {
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front().text), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->timer_.cancel();
        return;
      }
      self->queue_.pop_front();
      if (self->queue_.empty()) {
        self->writing_ = false;
      } else {
        self->write_next();
      }
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  http::request<http::string_body> upgrade_;
  beast::flat_buffer buffer_;
  Server::Impl& server_;
  net::steady_timer timer_;
  std::unique_ptr<Session> session_;
  std::optional<StartRequest> last_start_;
  bool fast_ = false;
  bool closed_ = false;
  bool writing_ = false;
  std::deque<Outgoing> queue_;
  std::size_t dropped_ = 0;
  std::chrono::steady_clock::time_point next_tick_;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket socket, Server::Impl& server) : stream_(std::move(socket)), server_(server) {}

  void run() { read(); }

 private:
  void read() {
    req_ = {};
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->on_request();
    });
  }

  void on_request() {
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/ws") {
        std::make_shared<WsConnection>(stream_.release_socket(), server_)->run(std::move(req_));
        return;
      }
    }
    auto res = std::make_shared<http::response<http::string_body>>(route());
    res->set(http::field::content_type, "application/json");
    res->set(http::field::access_control_allow_origin, "*");
    res->keep_alive(req_.keep_alive());
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (res->keep_alive()) {
        self->read();
      } else {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      }
    });
  }

  http::response<http::string_body> route() {
    http::response<http::string_body> res{http::status::ok, req_.version()};
    const std::string target(req_.target());
    const std::string reports_prefix = "/api/reports/";
    if (req_.method() != http::verb::get) {
      res.result(http::status::method_not_allowed);
      res.body() = json{{"error", "only GET is supported"}}.dump();
    } else if (target == "/api/scenarios") {
      json list = json::array();
      for (const auto& n : list_scenarios(server_.options.scenarios_dir)) list.push_back(n);
      res.body() = json{{"version", kProtocolVersion}, {"scenarios", list}}.dump();
    } else if (target == "/api/reports") {
      res.body() = json{{"version", kProtocolVersion}, {"reports", server_.reports.ids()}}.dump();
    } else if (target.rfind(reports_prefix, 0) == 0) {
      const auto report = server_.reports.get(target.substr(reports_prefix.size()));
      if (report) {
        res.body() = *report;
      } else {
        res.result(http::status::not_found);
        res.body() = json{{"error", "no such report"}}.dump();
      }
    } else {
      res.result(http::status::not_found);
      res.body() = json{{"error", "not found"}}.dump();
    }
    return res;
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  Server::Impl& server_;
};

}  // namespace

void Server::Impl::accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    std::make_shared<HttpConnection>(std::move(socket), *this)->run();
    accept();
  });
}

Server::Server(ServerOptions options) : impl_(std::make_shared<Impl>(std::move(options))) { impl_->accept(); }

Server::~Server() { stop(); }

unsigned short Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::run() { impl_->ioc.run(); }

void Server::stop() {
  net::post(impl_->ioc, [impl = impl_] {
    beast::error_code ignored;
    impl->acceptor.close(ignored);
    impl->ioc.stop();
  });
}

const ReportStore& Server::reports() const { return impl_->reports; }

}  // namespace cathnav::service
