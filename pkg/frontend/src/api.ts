/** Typed client for the inference service's HTTP/JSON API. */

export interface HealthResponse {
  status: string;
  iteration: number;
}

export interface SampleInfo {
  id: string;
  thumbnail: string; // base64 PNG
}

export interface SampleDetail {
  id: string;
  image: string;     // base64 PNG
  mask: string;      // base64 indexed PNG, values 0..4
  gender?: number;
}

export interface SynthesisRequestBody {
  source: string;
  mode: "latent" | "reference";
  reference?: string;
  mask?: string;
  domain: number | string;
  seed?: number;
  masked_attributes?: string[];
}

export interface SynthesisResponse {
  image: string;
  predicted_mask: string;
  timing_ms: number;
}

/** Error body the server guarantees: { code, message }. */
export class ApiError extends Error {
  constructor(readonly code: string, message: string, readonly status: number) {
    super(message);
    this.name = "ApiError";
  }
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let code = "http_error";
    let message = `${response.status} ${response.statusText}`;
    try {
      const body = await response.json();
      if (body && typeof body.code === "string") {
        code = body.code;
        message = body.message ?? message;
      }
    } catch {
      // non-JSON error body; keep defaults
    }
    throw new ApiError(code, message, response.status);
  }
  return response.json() as Promise<T>;
}

export class EditorApi {
  constructor(readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  health(): Promise<HealthResponse> {
    return fetch(this.url("/api/health")).then((r) => asJson<HealthResponse>(r));
  }

  samples(): Promise<SampleInfo[]> {
    return fetch(this.url("/api/samples"))
      .then((r) => asJson<{ samples: SampleInfo[] }>(r))
      .then((body) => body.samples);
  }

  sample(id: string): Promise<SampleDetail> {
    return fetch(this.url(`/api/samples/${id}`)).then((r) => asJson<SampleDetail>(r));
  }

  segment(image: string): Promise<string> {
    return fetch(this.url("/api/segment"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ image }),
    })
      .then((r) => asJson<{ mask: string }>(r))
      .then((body) => body.mask);
  }

  synthesize(request: SynthesisRequestBody): Promise<SynthesisResponse> {
    return fetch(this.url("/api/synthesize"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(request),
    }).then((r) => asJson<SynthesisResponse>(r));
  }
}
