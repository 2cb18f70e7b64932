/** Incremental parser for a server-sent event stream.
 *
 * Implemented over fetch body streams rather than EventSource so the same
 * code runs in the browser and under node-based tests.
 */

export interface SseMessage {
  event: string;
  data: unknown;
}

export function parseSseChunk(buffer: string): { messages: SseMessage[]; rest: string } {
  const messages: SseMessage[] = [];
  const blocks = buffer.split("\n\n");
  const rest = blocks.pop() ?? "";
  for (const block of blocks) {
    if (!block.trim()) continue;
    let event = "message";
    const dataLines: string[] = [];
    for (const line of block.split("\n")) {
      if (line.startsWith("event:")) {
        event = line.slice(6).trim();
      } else if (line.startsWith("data:")) {
        dataLines.push(line.slice(5).trimStart());
      }
    }
    if (dataLines.length) {
      messages.push({ event, data: JSON.parse(dataLines.join("\n")) });
    }
  }
  return { messages, rest };
}

export async function consumeSse(
  body: ReadableStream<Uint8Array>,
  onMessage: (msg: SseMessage) => void,
): Promise<void> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  for (;;) {
    const { done, value } = await reader.read();
    if (done) break;
    buffer += decoder.decode(value, { stream: true });
    const { messages, rest } = parseSseChunk(buffer);
    buffer = rest;
    for (const msg of messages) onMessage(msg);
  }
  const { messages } = parseSseChunk(buffer + "\n\n");
  for (const msg of messages) onMessage(msg);
}
