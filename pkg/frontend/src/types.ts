/** Wire types for the mapper service API. */

export interface DescriptorRange {
  id: string;
  text: string;
  lo: number;
  hi: number;
  default: number;
}

export interface MapperInfo {
  mapper_id: string;
  model_id: string;
  descriptors: DescriptorRange[];
}

export interface Topology {
  model_id: string;
  n_vertices: number;
  faces: number[][];
}

export interface MeshPayload {
  vertices: number[][];
  faces?: number[][];
}

export interface MapResponse {
  xi: number[];
  mesh: MeshPayload;
}

export interface ZeroShotResponse {
  xi: number[];
  scores: number[];
  mesh: MeshPayload;
}

/** Decoded binary map_buffer payload. */
export interface MappedMesh {
  xi: Float32Array;
  vertices: Float32Array; // interleaved xyz, length 3 * nVertices
  nVertices: number;
}
