"""
Central controller and learner workers.

Each iteration the controller broadcasts every agent's policy pair, waits
until all M learners have returned their updated pair for that iteration,
installs them, and periodically evaluates the team with episodic rollouts.
Critic parameters never leave the learners; no message kind carries them.

Transports:

- ``inproc``  one thread per learner, QueueChannel pairs
- ``tcp``     one spawned OS process per learner connecting back to the
              controller's listener; learners announce themselves with HELLO
"""

import glob
import logging
import multiprocessing
import os
import queue
import socket
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List

from envs import ADVERSARY_TEAM, make_env, rollout
from learner import PolicyPair, init_policy_table, make_learner, run_iteration
from neural_net import pack_params, unpack_params
from reporting import MetricsRow, log_metrics_row
from run_config import env_config
from seeding import derive_seed
from wire_protocol import (
    Heartbeat,
    Hello,
    LearnerFailure,
    ParamMsg,
    ProtocolError,
    Shutdown,
    SocketChannel,
    UpdateMsg,
    decode_message,
    encode_message,
    queue_pair,
)

logger = logging.getLogger(__name__)


class CoordinatorError(RuntimeError):
    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)


# -- policy tables on disk -------------------------------------------------


def save_policy_table(table: List[PolicyPair], directory):
    os.makedirs(directory, exist_ok=True)
    for i, pair in enumerate(table):
        with open(os.path.join(directory, f"agent_{i}.bin"), "wb") as f:
            f.write(pack_params(pair.policy) + pack_params(pair.target))


def load_policy_pair(path, head):
    with open(path, "rb") as f:
        blob = f.read()
    policy, offset = unpack_params(blob, 0, head)
    target, offset = unpack_params(blob, offset, head)
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")
    return PolicyPair(policy, target)


def load_policy_table(directory, num_agents, head, ids=None) -> Dict[int, PolicyPair]:
    """Policy pairs stored as agent_<i>.bin; ``ids`` restricts which agents are read."""
    wanted = range(num_agents) if ids is None else ids
    found = {}
    for i in wanted:
        path = os.path.join(directory, f"agent_{i}.bin")
        if not os.path.exists(path):
            raise FileNotFoundError(f"no saved policy for agent {i} in {directory}")
        found[i] = load_policy_pair(path, head)
    extra = len(glob.glob(os.path.join(directory, "agent_*.bin"))) - num_agents
    if ids is None and extra > 0:
        logger.warning(f"⚠️ {directory} holds {extra} more policy files than the {num_agents} agents of this run")
    return found


def install_pairs(table, pairs: Dict[int, PolicyPair]):
    for i, pair in pairs.items():
        if not (table[i].policy.same_shape(pair.policy) and table[i].target.same_shape(pair.target)):
            raise ValueError(f"saved policy of agent {i} does not match the network shape of this run")
        table[i] = pair


def initial_table(env, cfg):
    table = init_policy_table(env, cfg)
    adversaries = [i for i in range(env.num_agents) if env.team_of(i) == ADVERSARY_TEAM]
    if cfg.adversary_mode == "frozen" and adversaries:
        if cfg.adversary_params_dir:
            install_pairs(table, load_policy_table(cfg.adversary_params_dir, env.num_agents,
                                                   env.policy_head, adversaries))
            logger.info(f"✅ Loaded {len(adversaries)} frozen adversary policies from {cfg.adversary_params_dir}")
        else:
            logger.warning("⚠️ adversary_mode=frozen without adversary_params_dir: adversaries keep their "
                           "initial policies")
    return table


# -- learner side ----------------------------------------------------------


def _heartbeat_loop(channel, interval, stop):
    while not stop.wait(interval):
        try:
            channel.send(encode_message(Heartbeat()))
        except OSError:
            return


def _report_failure(channel, agent_id, iteration, error):
    reason = f"{type(error).__name__}: {error}"
    logger.error(f"❌ agent {agent_id} failed at iteration {iteration}: {reason}")
    try:
        channel.send(encode_message(LearnerFailure(max(iteration, 0), agent_id, reason)))
    except OSError:
        logger.debug(f"agent {agent_id}: could not report failure, controller channel closed")


def serve_learner(channel, env, cfg, agent_id):
    """
    Learner loop: answer each ParamMsg with an UpdateMsg until Shutdown.

    Any other error is sent to the controller as a LearnerFailure frame and
    ends the loop.
    """
    learner = make_learner(env, cfg, agent_id)
    stop = threading.Event()
    beat = threading.Thread(target=_heartbeat_loop, args=(channel, cfg.heartbeat_interval, stop), daemon=True)
    beat.start()
    last_frame = None
    msg = None
    try:
        while True:
            msg = decode_message(channel.recv(), env.policy_head)
            if isinstance(msg, Shutdown):
                break
            if not isinstance(msg, ParamMsg):
                continue
            done = learner.last_update.iteration if learner.last_update else -1
            if msg.iteration == done and last_frame is not None:
                channel.send(last_frame)
                continue
            if msg.iteration < done:
                logger.debug(f"agent {agent_id}: ignoring stale params of iteration {msg.iteration}")
                continue
            table = [PolicyPair(p, t) for p, t in zip(msg.policies, msg.targets)]
            update = run_iteration(learner, msg.iteration, table)
            last_frame = encode_message(UpdateMsg(update.iteration, agent_id, update.policy, update.target,
                                                  update.collect_s, update.update_s))
            channel.send(last_frame)
    except ConnectionError:
        logger.debug(f"agent {agent_id}: controller channel closed")
    except Exception as e:
        _report_failure(channel, agent_id, getattr(msg, "iteration", -1), e)
    finally:
        stop.set()
    return learner


def learner_process_main(cfg, agent_id, host, port):
    """Entry point of a TCP learner process."""
    logging.basicConfig(level=os.getenv("DARL1N_LOG_LEVEL", "INFO"))
    env = make_env(env_config(cfg))
    sock = socket.create_connection((host, port), timeout=cfg.collect_timeout)
    sock.settimeout(None)
    channel = SocketChannel(sock)
    try:
        channel.send(encode_message(Hello(agent_id)))
        serve_learner(channel, env, cfg, agent_id)
    finally:
        channel.close()


# -- controller side -------------------------------------------------------


@dataclass
class Controller:
    cfg: object
    env: object
    channels: Dict[int, object]
    table: List[PolicyPair]
    inbox: queue.Queue = field(default_factory=queue.Queue)
    last_seen: Dict[int, float] = field(default_factory=dict)
    closing: bool = False

    def __post_init__(self):
        self._lock = threading.Lock()
        self._readers = []
        for agent_id, channel in self.channels.items():
            reader = threading.Thread(target=self._read, args=(agent_id, channel), daemon=True)
            reader.start()
            self._readers.append(reader)

    def _read(self, agent_id, channel):
        while True:
            try:
                msg = decode_message(channel.recv(), self.env.policy_head)
            except (OSError, ProtocolError) as e:
                if not self.closing:
                    self.inbox.put((agent_id, e))
                return
            self.inbox.put((agent_id, msg))

    def _send(self, agent_id, frame):
        channel = self.channels[agent_id]
        for attempt in range(self.cfg.send_retries):
            try:
                channel.send(frame)
                return
            except OSError as e:
                delay = self.cfg.retry_backoff_s * 2 ** attempt
                logger.warning(f"⚠️ send to agent {agent_id} failed ({e}), retrying in {delay:.2f}s")
                time.sleep(delay)
        raise CoordinatorError(f"could not reach agent {agent_id} after {self.cfg.send_retries} attempts",
                               missing=[agent_id])

    def broadcast_params(self, iteration):
        frame = encode_message(ParamMsg(iteration, [p.policy for p in self.table], [p.target for p in self.table]))
        for agent_id in sorted(self.channels):
            self._send(agent_id, frame)

    def _check_update(self, agent_id, msg):
        if msg.agent_id != agent_id:
            raise ProtocolError(f"channel of agent {agent_id} delivered an update for agent {msg.agent_id}")
        current = self.table[agent_id]
        if not (current.policy.same_shape(msg.policy) and current.target.same_shape(msg.target)):
            raise ProtocolError(f"update of agent {agent_id} does not match the registered network shapes")

    def _silence(self, agent_ids):
        now = time.monotonic()
        parts = []
        for agent_id in agent_ids:
            seen = self.last_seen.get(agent_id)
            parts.append(f"agent {agent_id} never heard from" if seen is None
                         else f"agent {agent_id} last heard {now - seen:.1f}s ago")
        return "; ".join(parts)

    def collect_updates(self, iteration, timeout) -> Dict[int, UpdateMsg]:
        """Block until every agent's update for ``iteration`` arrived, then install them."""
        pending = set(self.channels)
        received = {}
        deadline = time.monotonic() + timeout
        while pending:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                missing = sorted(pending)
                raise CoordinatorError(f"iteration {iteration}: no update from agents {missing} "
                                       f"within {timeout}s ({self._silence(missing)})", missing=missing)
            try:
                agent_id, msg = self.inbox.get(timeout=remaining)
            except queue.Empty:
                continue
            if isinstance(msg, Exception):
                raise CoordinatorError(f"channel of agent {agent_id} failed: {msg}", missing=[agent_id]) from msg
            self.last_seen[agent_id] = time.monotonic()
            if isinstance(msg, LearnerFailure):
                raise CoordinatorError(f"iteration {iteration}: agent {msg.agent_id} failed: {msg.reason}",
                                       missing=[msg.agent_id])
            if not isinstance(msg, UpdateMsg):
                continue
            if msg.iteration != iteration:
                logger.debug(f"stale update from agent {agent_id} for iteration {msg.iteration}")
                continue
            if msg.agent_id in received:
                logger.debug(f"duplicate update from agent {agent_id} for iteration {iteration}")
                continue
            self._check_update(agent_id, msg)
            received[msg.agent_id] = msg
            pending.discard(msg.agent_id)
        with self._lock:
            for agent_id, msg in received.items():
                self.table[agent_id] = PolicyPair(msg.policy, msg.target)
        return received

    def shutdown(self):
        self.closing = True
        frame = encode_message(Shutdown())
        for agent_id, channel in self.channels.items():
            try:
                channel.send(frame)
            except OSError:
                logger.debug(f"agent {agent_id} already gone at shutdown")


@contextmanager
def inproc_controller(cfg, env, table):
    channels = {}
    workers = []
    for i in range(env.num_agents):
        controller_end, learner_end = queue_pair()
        channels[i] = controller_end
        worker = threading.Thread(target=serve_learner, args=(learner_end, make_env(env_config(cfg)), cfg, i),
                                  name=f"learner-{i}", daemon=True)
        worker.start()
        workers.append(worker)
    controller = Controller(cfg, env, channels, table)
    try:
        yield controller
    finally:
        controller.shutdown()
        for worker in workers:
            worker.join(timeout=cfg.collect_timeout)
        for channel in channels.values():
            channel.close()


def _accept_learners(listener, cfg, num_agents):
    channels = {}
    listener.settimeout(cfg.collect_timeout)
    while len(channels) < num_agents:
        try:
            sock, _ = listener.accept()
        except socket.timeout:
            missing = sorted(set(range(num_agents)) - set(channels))
            raise CoordinatorError(f"learners {missing} never connected", missing=missing) from None
        sock.settimeout(None)
        channel = SocketChannel(sock)
        hello = decode_message(channel.recv(timeout=cfg.collect_timeout))
        if not isinstance(hello, Hello):
            raise ProtocolError(f"expected HELLO from a new learner, got {type(hello).__name__}")
        if hello.agent_id in channels or not 0 <= hello.agent_id < num_agents:
            raise ProtocolError(f"unexpected HELLO from agent {hello.agent_id}")
        channels[hello.agent_id] = channel
    return channels


@contextmanager
def tcp_controller(cfg, env, table):
    listener = socket.create_server((cfg.listen_host, cfg.listen_port))
    host, port = listener.getsockname()[:2]
    logger.info(f"🚀 Controller listening on {host}:{port} for {env.num_agents} learners")
    context = multiprocessing.get_context("spawn")
    processes = [
        context.Process(target=learner_process_main, args=(cfg, i, host, port), name=f"learner-{i}", daemon=True)
        for i in range(env.num_agents)
    ]
    for process in processes:
        process.start()
    controller = None
    try:
        controller = Controller(cfg, env, _accept_learners(listener, cfg, env.num_agents), table)
        yield controller
    finally:
        if controller is not None:
            controller.shutdown()
        for process in processes:
            process.join(timeout=cfg.collect_timeout)
            if process.is_alive():
                logger.warning(f"⚠️ {process.name} did not exit, terminating")
                process.terminate()
        if controller is not None:
            for channel in controller.channels.values():
                channel.close()
        listener.close()


def start_controller(cfg, env, table):
    if cfg.transport == "tcp":
        return tcp_controller(cfg, env, table)
    return inproc_controller(cfg, env, table)


# -- training loop ---------------------------------------------------------


@dataclass
class TrainingResult:
    rows: List[MetricsRow]
    table: List[PolicyPair]


def evaluate(env, table, cfg, iteration):
    rewards = rollout(env, [pair.policy for pair in table], derive_seed(cfg.seed, "eval", iteration),
                      cfg.eval_episodes)
    return sum(rewards) / len(rewards)


def is_eval_point(cfg, iteration):
    return (iteration + 1) % cfg.eval_every == 0


def run_training(cfg, max_iterations=None) -> TrainingResult:
    """DARL1N training: broadcast, barrier on all updates, evaluate; one row per evaluation point."""
    env = make_env(env_config(cfg))
    iterations = cfg.max_iterations if max_iterations is None else max_iterations
    table = initial_table(env, cfg)
    rows = []
    logger.info(f"🚀 Training darl1n on {cfg.env} with M={cfg.M} over {cfg.transport} for {iterations} iterations")
    with start_controller(cfg, env, table) as controller:
        started = time.perf_counter()
        for iteration in range(iterations):
            controller.broadcast_params(iteration)
            updates = controller.collect_updates(iteration, cfg.collect_timeout)
            if not is_eval_point(cfg, iteration):
                continue
            row = MetricsRow(
                iteration=iteration,
                seconds=time.perf_counter() - started,
                avg_total_reward=evaluate(env, controller.table, cfg, iteration),
                collect_s=max(u.collect_s for u in updates.values()),
                update_s=max(u.update_s for u in updates.values()),
            )
            rows.append(row)
            log_metrics_row(row)
        table = controller.table
    logger.info(f"✅ Training finished after {iterations} iterations")
    return TrainingResult(rows, table)
