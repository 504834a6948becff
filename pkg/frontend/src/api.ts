/**
 * Typed client for the labeling/prediction service (HTTP+JSON).
 *
 * Every response carries `schema_version`; errors come back as
 * `{code, message}` and are surfaced as ApiError so callers can tell
 * transport failures (retry) from rejections (fix the request).
 */

export type ClassName = 'PERFECT' | 'CLEAR' | 'CLOUDY' | 'OBSCURED' | 'BAD';

export const CLASS_NAMES: readonly ClassName[] = [
  'PERFECT',
  'CLEAR',
  'CLOUDY',
  'OBSCURED',
  'BAD',
];

export interface QcInfo {
  verdict: string | null;
  grayness: number | null;
  needs_review: boolean;
  duplicate_of: [string, string] | null;
}

export interface FrameDescriptor {
  camera_id: string;
  captured_at: string; // RFC 3339 UTC
  date: string;
  image_url: string;
  qc: QcInfo;
}

export interface NextFrameResponse {
  schema_version: number;
  frame: FrameDescriptor | null;
  queue_size: number;
  drained: boolean;
}

export interface SubmitResponse {
  schema_version: number;
  ok: boolean;
  queue_size: number;
  history_length: number;
}

export interface UndoResponse {
  schema_version: number;
  ok: boolean;
  queue_size: number;
}

export interface LabelEvent {
  camera_id: string;
  captured_at: string;
  kind: 'label' | 'undo';
  label?: ClassName;
  annotator: string;
  submitted_at: string;
}

export interface HistoryResponse {
  schema_version: number;
  events: LabelEvent[];
  count: number;
}

export interface ClassStatsResponse {
  schema_version: number;
  counts: Record<ClassName, number>;
  total: number;
}

export interface NextFilters {
  camera?: string;
  date?: string;
  needsReview?: boolean;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

type FetchLike = typeof fetch;

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      throw new ApiError(
        response.status,
        (body as { code?: string }).code ?? 'error',
        (body as { message?: string }).message ?? `HTTP ${response.status}`,
      );
    }
    return body as T;
  }

  nextFrame(annotator: string, filters: NextFilters = {}): Promise<NextFrameResponse> {
    const params = new URLSearchParams({ annotator });
    if (filters.camera) params.set('camera', filters.camera);
    if (filters.date) params.set('date', filters.date);
    if (filters.needsReview) params.set('needs_review', 'true');
    return this.request(`/api/frames/next?${params.toString()}`);
  }

  submitLabel(
    cameraId: string,
    capturedAt: string,
    label: ClassName,
    annotator: string,
  ): Promise<SubmitResponse> {
    return this.request('/api/labels', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({
        camera_id: cameraId,
        captured_at: capturedAt,
        label,
        annotator,
      }),
    });
  }

  undoLabel(cameraId: string, capturedAt: string, annotator: string): Promise<UndoResponse> {
    return this.request('/api/labels/undo', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ camera_id: cameraId, captured_at: capturedAt, annotator }),
    });
  }

  history(cameraId?: string, capturedAt?: string): Promise<HistoryResponse> {
    const params = new URLSearchParams();
    if (cameraId) params.set('camera_id', cameraId);
    if (capturedAt) params.set('captured_at', capturedAt);
    const query = params.toString();
    return this.request(`/api/labels/history${query ? `?${query}` : ''}`);
  }

  classStats(): Promise<ClassStatsResponse> {
    return this.request('/api/stats/classes');
  }

  imageUrl(frame: FrameDescriptor): string {
    return `${this.baseUrl}${frame.image_url}`;
  }
}
