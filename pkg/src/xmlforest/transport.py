"""
Message transports for the master/worker gather.

A transport moves opaque byte messages between numbered peers (rank 0 is
the master). ``LoopbackHub`` connects peers inside one process;
``HttpTransport`` carries messages as HTTP POSTs over TCP, sent with
requests and received by a FastAPI app that uvicorn serves from a
background thread.
"""

import logging
import queue
import socket
import threading
import time
from abc import ABC, abstractmethod
from typing import Dict, Optional, Tuple

import requests
import uvicorn
from fastapi import APIRouter, FastAPI, Header, HTTPException
from fastapi.requests import Request
from fastapi.responses import Response

from .exceptions import TransportError, TransportTimeoutError

RANK_HEADER = "X-Xmlforest-Rank"
FRAMES_PATH = "/frames"

logger = logging.getLogger("xmlforest")

Address = Tuple[str, int]


class Transport(ABC):
    """Duplex channel: send to a peer rank, receive from any peer."""

    def __init__(self, rank: int):
        self.rank = rank

    @abstractmethod
    def send(self, peer: int, data: bytes) -> None:
        """Deliver ``data`` to ``peer`` intact. Raises TransportError."""

    @abstractmethod
    def receive(self, timeout: Optional[float] = None) -> Tuple[int, bytes]:
        """Next (sender rank, data). Raises TransportTimeoutError."""

    def close(self) -> None:
        pass

    def __enter__(self) -> "Transport":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class LoopbackHub:
    """In-process message switch; one FIFO inbox per rank."""

    def __init__(self):
        self._inboxes: Dict[int, "queue.Queue[Tuple[int, bytes]]"] = {}
        self._lock = threading.Lock()

    def inbox(self, rank: int) -> "queue.Queue[Tuple[int, bytes]]":
        with self._lock:
            if rank not in self._inboxes:
                self._inboxes[rank] = queue.Queue()
            return self._inboxes[rank]

    def endpoint(self, rank: int) -> "LoopbackTransport":
        return LoopbackTransport(self, rank)


class LoopbackTransport(Transport):
    def __init__(self, hub: LoopbackHub, rank: int):
        super().__init__(rank)
        self.hub = hub

    def send(self, peer: int, data: bytes) -> None:
        self.hub.inbox(peer).put((self.rank, bytes(data)))

    def receive(self, timeout: Optional[float] = None) -> Tuple[int, bytes]:
        try:
            return self.hub.inbox(self.rank).get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeoutError(
                f"rank {self.rank}: nothing received within {timeout}s"
            ) from None


frames_route = APIRouter()


@frames_route.post(FRAMES_PATH)
async def receive_frame(
    request: Request, rank: Optional[str] = Header(None, alias=RANK_HEADER)
) -> Response:
    try:
        sender = int(rank or "")
    except ValueError:
        raise HTTPException(
            status_code=400, detail=f"missing or bad {RANK_HEADER} header"
        ) from None
    body = await request.body()
    request.app.state.inbox.put((sender, body))
    return Response(status_code=200)


def create_frames_app(inbox: "queue.Queue[Tuple[int, bytes]]") -> FastAPI:
    """ASGI app that queues every frame POSTed to FRAMES_PATH."""
    app = FastAPI(docs_url=None, redoc_url=None, openapi_url=None)
    app.state.inbox = inbox
    app.include_router(frames_route)
    return app


class _FrameReceiver:
    """uvicorn serving the frames app from a background thread."""

    def __init__(
        self,
        listen: Address,
        inbox: "queue.Queue[Tuple[int, bytes]]",
        name: str,
        start_timeout: float = 10.0,
    ):
        self.socket = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.socket.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self.socket.bind(listen)
        except OSError as e:
            self.socket.close()
            raise TransportError(f"cannot listen on {listen[0]}:{listen[1]}: {e}") from e
        config = uvicorn.Config(
            create_frames_app(inbox),
            log_config=None,
            log_level="warning",
            access_log=False,
            lifespan="off",
        )
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(
            target=self.server.run, kwargs={"sockets": [self.socket]}, name=name, daemon=True
        )
        self.thread.start()
        deadline = time.monotonic() + start_timeout
        while not self.server.started:
            if not self.thread.is_alive() or time.monotonic() > deadline:
                self.close()
                raise TransportError(f"frame receiver on {listen[0]}:{listen[1]} did not start")
            time.sleep(0.01)
        logger.debug("transport: %s listening on %s:%d", name, *self.address)

    @property
    def address(self) -> Address:
        host, port = self.socket.getsockname()[:2]
        return str(host), int(port)

    def close(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=5)
        self.socket.close()


class HttpTransport(Transport):
    """Messages as HTTP POSTs to ``http://host:port/frames``.

    ``roster`` maps peer ranks to addresses. Pass ``listen`` to receive;
    port 0 binds a free port, reported by ``address``.
    """

    def __init__(
        self,
        rank: int,
        roster: Dict[int, Address],
        listen: Optional[Address] = None,
        connect_timeout: float = 5.0,
        read_timeout: float = 30.0,
    ):
        super().__init__(rank)
        self.roster = dict(roster)
        self.connect_timeout = connect_timeout
        self.read_timeout = read_timeout
        self._inbox: "queue.Queue[Tuple[int, bytes]]" = queue.Queue()
        self._receiver: Optional[_FrameReceiver] = None
        if listen is not None:
            self._receiver = _FrameReceiver(listen, self._inbox, name=f"xmlforest-rank{rank}")

    @property
    def address(self) -> Optional[Address]:
        if self._receiver is None:
            return None
        return self._receiver.address

    def send(self, peer: int, data: bytes) -> None:
        if peer not in self.roster:
            raise TransportError("not in roster", peer=peer)
        host, port = self.roster[peer]
        url = f"http://{host}:{port}{FRAMES_PATH}"
        try:
            response = requests.post(
                url,
                data=bytes(data),
                headers={
                    "Content-Type": "application/octet-stream",
                    RANK_HEADER: str(self.rank),
                },
                timeout=(self.connect_timeout, self.read_timeout),
            )
        except requests.exceptions.RequestException as e:
            raise TransportError(f"cannot reach {url}: {e}", peer=peer) from e
        if response.status_code not in [200, 201]:
            raise TransportError(f"HTTP {response.status_code} from {url}", peer=peer)

    def receive(self, timeout: Optional[float] = None) -> Tuple[int, bytes]:
        if self._receiver is None:
            raise TransportError(f"rank {self.rank} is not listening")
        try:
            return self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeoutError(
                f"rank {self.rank}: nothing received within {timeout}s"
            ) from None

    def close(self) -> None:
        if self._receiver is not None:
            self._receiver.close()
            self._receiver = None
