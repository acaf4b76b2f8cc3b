from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from feeder_analyzer.api.endpoints import http_status_for, setup_routes
from feeder_analyzer.errors import FeederAnalyzerError


# Créer l'application FastAPI
app = FastAPI(
    title="Feeder Analyzer API",
    description="API pour simuler l'impact des fonctions d'onduleurs intelligents sur un départ",
    version="1.0.0"
)

# Configurer CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],  # Pour le développement, à restreindre en production
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.exception_handler(FeederAnalyzerError)
async def feeder_error_handler(request: Request, exc: FeederAnalyzerError):
    return JSONResponse(status_code=http_status_for(exc),
                        content={"detail": str(exc), "error_type": type(exc).__name__})


# Configurer les routes
setup_routes(app)


# Pour l'exécution avec uvicorn directement
if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
