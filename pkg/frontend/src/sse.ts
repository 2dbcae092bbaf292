/** Incremental parser for a server-sent-event byte stream.
 *
 * Feed it decoded text chunks as they arrive; it returns the data
 * payloads of any events completed by that chunk, in stream order —
 * chunk boundaries may fall anywhere, including inside a field.
 * Comment lines (": keep-alive") are discarded.
 */
export class SSEParser {
  private buf = "";

  push(chunk: string): string[] {
    this.buf += chunk;
    const out: string[] = [];
    let cut: number;
    while ((cut = this.buf.indexOf("\n\n")) >= 0) {
      const block = this.buf.slice(0, cut);
      this.buf = this.buf.slice(cut + 2);
      const data = block
        .split("\n")
        .filter((line) => line.startsWith("data:"))
        .map((line) => line.slice("data:".length).replace(/^ /, ""));
      if (data.length > 0) out.push(data.join("\n"));
    }
    return out;
  }
}
