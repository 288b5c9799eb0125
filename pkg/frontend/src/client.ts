/**
 * Session client: owns a WebSocket-like connection and the client model,
 * sending the join on open and folding every incoming message into the
 * model. The socket is injected through a minimal interface so tests and
 * Node-based tooling can supply their own implementation.
 */

import { ClientModel, applyMessage, initialModel } from "./model.js";
import { Message, Role, decode, encode, join } from "./protocol.js";

/** The slice of the WebSocket API the client relies on. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export class SessionClient {
  readonly model: ClientModel;
  private readonly socket: SocketLike;
  /** Invoked after each message is applied; hook for re-rendering. */
  onUpdate: ((model: ClientModel) => void) | null = null;

  constructor(socket: SocketLike, role: Role, agentId: string | null = null) {
    this.model = initialModel();
    this.socket = socket;
    socket.onopen = () => {
      this.send(join(role, agentId));
    };
    socket.onmessage = (ev) => {
      this.handleText(String(ev.data));
    };
    socket.onclose = () => {
      this.model.status = "closed";
      this.notify();
    };
    socket.onerror = () => {
      this.model.status = "closed";
      this.notify();
    };
  }

  /** Decode and apply one raw frame. Exposed for tests. */
  handleText(text: string): void {
    let msg: Message;
    try {
      msg = decode(text);
    } catch {
      return; // a frame we cannot parse is dropped, not fatal
    }
    applyMessage(this.model, msg);
    this.notify();
  }

  send(msg: Message): void {
    this.socket.send(encode(msg));
  }

  close(): void {
    this.socket.close();
  }

  private notify(): void {
    if (this.onUpdate) {
      this.onUpdate(this.model);
    }
  }
}
