/**
 * Minimal safetensors reader/writer.
 *
 * Layout: 8-byte little-endian u64 header size, a JSON header mapping
 * tensor names to {dtype, shape, data_offsets}, then the concatenated
 * tensor data (row-major, little-endian). Offsets are relative to the
 * first byte after the header. The optional "__metadata__" entry is
 * ignored on read.
 */

export interface TensorRecord {
  name: string;
  dtype: string; // safetensors dtype tag, e.g. "F32", "F64"
  shape: number[];
  data: Buffer; // raw little-endian bytes, length = product(shape) * itemsize
}

export const ITEM_SIZES: Record<string, number> = {
  F64: 8,
  F32: 4,
  F16: 2,
  BF16: 2,
  I64: 8,
  I32: 4,
  I16: 2,
  I8: 1,
  U8: 1,
  BOOL: 1,
};

interface HeaderEntry {
  dtype: string;
  shape: number[];
  data_offsets: [number, number];
}

export function parseSafetensors(buffer: Buffer): TensorRecord[] {
  if (buffer.length < 8) {
    throw new Error(`not a safetensors file: ${buffer.length} bytes`);
  }
  const headerSize = Number(buffer.readBigUInt64LE(0));
  if (8 + headerSize > buffer.length) {
    throw new Error(`corrupt safetensors header: declares ${headerSize} bytes`);
  }
  const header = JSON.parse(buffer.subarray(8, 8 + headerSize).toString("utf8")) as Record<
    string,
    HeaderEntry
  >;
  const dataStart = 8 + headerSize;
  const tensors: TensorRecord[] = [];
  for (const [name, entry] of Object.entries(header)) {
    if (name === "__metadata__") continue;
    const [begin, end] = entry.data_offsets;
    const itemSize = ITEM_SIZES[entry.dtype];
    const count = entry.shape.reduce((a, b) => a * b, 1);
    if (itemSize !== undefined && end - begin !== count * itemSize) {
      throw new Error(
        `tensor ${name}: data_offsets span ${end - begin} bytes, expected ${count * itemSize}`
      );
    }
    tensors.push({
      name,
      dtype: entry.dtype,
      shape: entry.shape,
      data: buffer.subarray(dataStart + begin, dataStart + end),
    });
  }
  return tensors;
}

export function serializeSafetensors(tensors: TensorRecord[]): Buffer {
  const header: Record<string, HeaderEntry> = {};
  let offset = 0;
  for (const t of tensors) {
    header[t.name] = {
      dtype: t.dtype,
      shape: t.shape,
      data_offsets: [offset, offset + t.data.length],
    };
    offset += t.data.length;
  }
  let headerJson = JSON.stringify(header);
  while ((8 + Buffer.byteLength(headerJson)) % 8 !== 0) {
    headerJson += " "; // pad like the reference implementation
  }
  const headerBuf = Buffer.from(headerJson, "utf8");
  const sizeBuf = Buffer.alloc(8);
  sizeBuf.writeBigUInt64LE(BigInt(headerBuf.length), 0);
  return Buffer.concat([sizeBuf, headerBuf, ...tensors.map((t) => t.data)]);
}
